#include "smvp/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace smvp::train {

namespace fs = std::filesystem;

std::vector<WindowPick> pick_windows(uint64_t seed, int64_t step,
                                     int64_t batch_size, int64_t n_sequences,
                                     int64_t seq_frames, int64_t window) {
  if (seq_frames < window)
    throw ConfigError("training sequences of " + std::to_string(seq_frames) +
                      " frames are shorter than the " +
                      std::to_string(window) + "-frame window");
  Rng rng(mix_seed(seed, hash_str("batch"), static_cast<uint64_t>(step)));
  std::vector<WindowPick> picks;
  for (int64_t b = 0; b < batch_size; ++b) {
    WindowPick p;
    p.sequence = rng.uniform_int(0, n_sequences - 1);
    p.start = rng.uniform_int(0, seq_frames - window);
    picks.push_back(p);
  }
  return picks;
}

std::vector<diff::TensorT<float>> stack_windows(
    const std::vector<synth::SequenceBatch>& data,
    const std::vector<WindowPick>& picks, int64_t window) {
  const auto& first = data.at(static_cast<size_t>(picks.at(0).sequence));
  const int64_t H = first.H, W = first.W;
  const int64_t B = static_cast<int64_t>(picks.size());
  std::vector<diff::TensorT<float>> frames;
  for (int64_t t = 0; t < window; ++t) {
    diff::TensorT<float> f({B, 3, H, W});
    for (int64_t b = 0; b < B; ++b) {
      const auto& seq = data.at(static_cast<size_t>(picks[b].sequence));
      const float* src =
          seq.frames.data() + (picks[b].start + t) * seq.frame_elems();
      std::copy(src, src + seq.frame_elems(),
                f.value().begin() + b * 3 * H * W);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

TrainResult run_training(model::Model<float>& m, diff::AdamState<float>& opt,
                         const config::RunConfig& cfg,
                         const std::vector<synth::SequenceBatch>& data,
                         int64_t start_step) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  const auto& mc = m.config();
  const int64_t window = mc.n_cond + mc.n_pred_train;
  const auto K = data[0].intrinsics;
  for (const auto& seq : data) {
    if (seq.H != mc.height || seq.W != mc.width)
      throw ConfigError("dataset resolution " + std::to_string(seq.H) + "x" +
                        std::to_string(seq.W) + " != model " +
                        std::to_string(mc.height) + "x" +
                        std::to_string(mc.width));
    if (seq.intrinsics.fx != K.fx || seq.intrinsics.cx != K.cx)
      throw ConfigError("dataset mixes intrinsics");
  }

  fs::create_directories(cfg.out_dir);
  const auto cfg_json = config::run_config_to_json(cfg);
  const std::string hash = config::config_hash(cfg_json);
  {
    std::ofstream os(cfg.out_dir + "/config.json");
    auto j = cfg_json;
    j["config_hash"] = hash;
    j["build"] = config::build_id();
    os << j.dump(2) << "\n";
  }

  const std::string log_path = cfg.out_dir + "/loss.csv";
  std::ofstream log(log_path,
                    start_step > 0 ? std::ios::app : std::ios::trunc);
  const bool dynamic = mc.variant != model::Variant::kDepthOnly;
  if (start_step == 0) {
    log << "# config=" << hash << " build=" << config::build_id() << "\n";
    log << "step,total,recon,recon_s";
    if (dynamic) log << ",recon_d";
    log << ",kl_s";
    if (dynamic) log << ",kl_d";
    log << ",sigma\n";
  }

  TrainResult result;
  result.loss_log_path = log_path;
  const std::string ckpt_path = cfg.out_dir + "/checkpoint_latest.ckpt";
  diff::CheckpointMeta meta;
  meta.variant = model::variant_name(mc.variant);
  meta.config_hash = hash;

  auto save = [&](int64_t step) {
    meta.step = step;
    diff::save_checkpoint(ckpt_path, m.params(), &opt, meta);
    result.checkpoint_path = ckpt_path;
  };

  for (int64_t step = start_step; step < cfg.train.steps; ++step) {
    auto picks = pick_windows(cfg.seed, step, mc.batch_size,
                              static_cast<int64_t>(data.size()),
                              data[0].T, window);
    auto frames = stack_windows(data, picks, window);
    model::ElboBreakdown bd;
    try {
      bd = m.train_step(frames, K,
                        opt,
                        mix_seed(cfg.seed, hash_str("noise"),
                                 static_cast<uint64_t>(step)));
    } catch (const NumericError& e) {
      result.nan_abort = true;
      result.abort_message = e.what();
      std::ofstream dump(cfg.out_dir + "/nan_abort.txt");
      dump << "step " << step << ": " << e.what() << "\n";
      result.steps_done = step;
      return result;
    }
    if (step % cfg.train.log_every == 0 || step + 1 == cfg.train.steps) {
      log << step << ',' << bd.total << ',' << bd.recon_final << ','
          << bd.recon_static;
      if (dynamic) log << ',' << bd.recon_dynamic;
      log << ',' << bd.kl_static;
      if (dynamic) log << ',' << bd.kl_dynamic;
      log << ',' << bd.sigma_final << "\n";
      log.flush();
    }
    if ((step + 1) % cfg.train.checkpoint_every == 0 ||
        step + 1 == cfg.train.steps)
      save(step + 1);
    result.steps_done = step + 1;
  }
  if (result.checkpoint_path.empty()) save(result.steps_done);
  return result;
}

}  // namespace smvp::train
