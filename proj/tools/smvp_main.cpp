#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "smvp/config.hpp"
#include "smvp/evaluate.hpp"
#include "smvp/trainer.hpp"
#include "smvp/verify.hpp"
#include "smvp/viz.hpp"

namespace fs = std::filesystem;
using namespace smvp;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerify = 4;

void banner(const json& cfg_json) {
  std::cout << "config " << config::config_hash(cfg_json) << "  build "
            << config::build_id() << "\n";
}

// --- gen -------------------------------------------------------------------

int cmd_gen(const std::string& spec_path, const std::string& out_dir,
            int threads) {
  std::ifstream is(spec_path);
  if (!is) throw ConfigError("cannot open scene spec '" + spec_path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("scene spec '" + spec_path + "' is not valid JSON");
  banner(j);

  std::vector<synth::SceneSpec> specs;
  if (j.contains("sequences")) {
    for (const auto& js : j.at("sequences"))
      specs.push_back(synth::scene_spec_from_json(js));
  } else if (j.contains("family")) {
    synth::SceneFamily family;
    const auto& f = j.at("family");
    family.frames = f.value("frames", family.frames);
    family.height = f.value("height", family.height);
    family.width = f.value("width", family.width);
    family.min_objects = f.value("min_objects", family.min_objects);
    family.max_objects = f.value("max_objects", family.max_objects);
    family.velocity_jitter = f.value("velocity_jitter", family.velocity_jitter);
    family.texture_frequency =
        f.value("texture_frequency", family.texture_frequency);
    family.allow_turns = f.value("allow_turns", family.allow_turns);
    family.allow_stop_and_go =
        f.value("allow_stop_and_go", family.allow_stop_and_go);
    const int64_t count = j.value("count", int64_t(8));
    const uint64_t seed = j.value("seed", uint64_t(1));
    for (int64_t i = 0; i < count; ++i)
      specs.push_back(synth::sample_scene_spec(
          mix_seed(seed, static_cast<uint64_t>(i)), family));
  } else {
    throw ConfigError("scene spec needs either 'sequences' or 'family'");
  }

  std::set<uint64_t> seen;
  for (const auto& s : specs)
    if (!seen.insert(s.seed).second)
      std::cerr << "warning: duplicate scene seed " << s.seed
                << "; generating anyway\n";

  // Generation is pure per spec; fan out across a bounded worker pool.
  std::vector<synth::SequenceBatch> batches(specs.size());
  std::vector<std::string> errors(specs.size());
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  const int n_workers =
      std::max(1, std::min<int>(threads, static_cast<int>(specs.size())));
  for (int w = 0; w < n_workers; ++w)
    pool.emplace_back([&]() {
      for (size_t i = next.fetch_add(1); i < specs.size();
           i = next.fetch_add(1)) {
        try {
          batches[i] = synth::generate(specs[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw NumericError("sequence " + std::to_string(i) + ": " + errors[i]);

  synth::write_dataset(batches, out_dir);
  std::cout << "wrote " << batches.size() << " sequences to " << out_dir
            << "\n";
  return kExitOk;
}

// --- train -----------------------------------------------------------------

int cmd_train(config::RunConfig cfg, const std::string& resume) {
  banner(config::run_config_to_json(cfg));
  set_num_threads(cfg.threads);
  auto data = synth::read_dataset(cfg.dataset);
  model::Model<float> m(cfg.model, mix_seed(cfg.seed, hash_str("init")));
  diff::AdamState<float> opt(
      {cfg.model.learning_rate, 0.9, 0.999, 1e-8});
  int64_t start_step = 0;
  if (!resume.empty()) {
    auto meta = diff::load_checkpoint(resume, m.params(), &opt);
    if (meta.variant != model::variant_name(cfg.model.variant))
      throw ConfigError("checkpoint variant '" + meta.variant +
                        "' does not match config '" +
                        model::variant_name(cfg.model.variant) + "'");
    start_step = meta.step;
    std::cout << "resumed from " << resume << " at step " << start_step
              << "\n";
  }
  auto result = train::run_training(m, opt, cfg, data, start_step);
  if (result.nan_abort) {
    std::cerr << "numeric failure: " << result.abort_message
              << " (last good checkpoint kept: " << result.checkpoint_path
              << ")\n";
    return kExitNumeric;
  }
  std::cout << "trained " << result.steps_done << " steps; checkpoint at "
            << result.checkpoint_path << "\n";
  return kExitOk;
}

// --- rollout ---------------------------------------------------------------

int cmd_rollout(config::RunConfig cfg, const std::string& checkpoint,
                int64_t sequence_index) {
  banner(config::run_config_to_json(cfg));
  set_num_threads(cfg.threads);
  auto data = synth::read_dataset(cfg.dataset);
  if (sequence_index < 0 ||
      sequence_index >= static_cast<int64_t>(data.size()))
    throw ConfigError("sequence index out of range");
  const auto& seq = data[static_cast<size_t>(sequence_index)];

  model::Model<float> m(cfg.model, mix_seed(cfg.seed, hash_str("init")));
  auto meta = diff::load_checkpoint(checkpoint, m.params(),
                                    static_cast<diff::AdamState<float>*>(nullptr));
  if (meta.variant != model::variant_name(cfg.model.variant))
    throw ConfigError("checkpoint variant '" + meta.variant +
                      "' does not match config '" +
                      model::variant_name(cfg.model.variant) + "'");

  const int64_t horizon =
      cfg.horizon > 0 ? cfg.horizon : cfg.model.n_pred_eval;
  if (seq.T < cfg.model.n_cond)
    throw ConfigError("sequence too short for the conditioning window");
  const bool have_gt = seq.T >= cfg.model.n_cond + horizon;
  if (!have_gt)
    std::cerr << "warning: horizon exceeds available ground truth; "
                 "metrics skipped\n";

  std::vector<metrics::Frame> context;
  for (int64_t t = 0; t < cfg.model.n_cond; ++t)
    context.push_back(seq.frame_tensor(t));
  auto rollouts = m.rollout(context, horizon, cfg.n_samples, seq.intrinsics,
                            cfg.seed);

  fs::create_directories(cfg.out_dir);
  const bool dynamic = cfg.model.variant != model::Variant::kDepthOnly;
  for (size_t s = 0; s < rollouts.size(); ++s) {
    const auto& roll = rollouts[s];
    // Montage rows: ground truth (when present), final, static, dynamic,
    // depth, residual flow, ego-motion flow.
    std::vector<std::vector<viz::Frame>> rows;
    if (have_gt) {
      rows.emplace_back();
      for (int64_t t = 0; t < horizon; ++t)
        rows.back().push_back(seq.frame_tensor(cfg.model.n_cond + t));
    }
    std::vector<viz::Frame> final_row, static_row, dynamic_row, depth_row,
        res_row, ego_row;
    for (const auto& step : roll.predicted) {
      final_row.push_back(step.final_frame);
      static_row.push_back(step.static_frame);
      if (dynamic) dynamic_row.push_back(step.dynamic_frame);
      depth_row.push_back(viz::depth_to_gray(step.depth));
      if (dynamic)
        res_row.push_back(viz::flow_to_rgb(step.residual_flow, 4.0));
      ego_row.push_back(viz::flow_to_rgb(step.ego_flow, 4.0));
    }
    rows.push_back(final_row);
    rows.push_back(static_row);
    if (dynamic) rows.push_back(dynamic_row);
    rows.push_back(depth_row);
    if (dynamic) rows.push_back(res_row);
    rows.push_back(ego_row);
    char name[64];
    std::snprintf(name, sizeof(name), "sample_%02zu", s);
    viz::write_montage(cfg.out_dir + "/" + name + "_strip.ppm", rows);

    // Raw dump in the dataset layout plus predicted auxiliaries.
    synth::SequenceBatch dump;
    dump.T = horizon;
    dump.H = seq.H;
    dump.W = seq.W;
    dump.intrinsics = seq.intrinsics;
    dump.spec = seq.spec;
    dump.spec.frames = horizon;
    dump.spec.objects.clear();
    const int64_t HW = seq.H * seq.W;
    for (int64_t t = 0; t < horizon; ++t) {
      const auto& step = roll.predicted[static_cast<size_t>(t)];
      for (int64_t i = 0; i < 3 * HW; ++i)
        dump.frames.push_back(step.final_frame.value()[i]);
      for (int64_t i = 0; i < HW; ++i)
        dump.depths.push_back(step.depth.value()[i]);
      for (int64_t i = 0; i < HW; ++i)
        dump.fg_masks.push_back(
            dynamic && step.mask.value()[i] < 0.5f ? 1.f : 0.f);
      if (t > 0) {
        dump.poses.push_back(roll.predicted[static_cast<size_t>(t)].pose);
        for (int64_t i = 0; i < 2 * HW; ++i) {
          const float r =
              dynamic ? step.residual_flow.value()[i] : 0.f;
          dump.flow_residual.push_back(r);
          dump.flow_total.push_back(step.ego_flow.value()[i] + r);
        }
        for (int64_t i = 0; i < HW; ++i) dump.valid_masks.push_back(1.f);
      }
    }
    synth::write_sequence(dump, cfg.out_dir + "/" + name);
  }
  std::cout << "wrote " << rollouts.size() << " samples to " << cfg.out_dir
            << "\n";
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(config::RunConfig cfg, const std::string& checkpoint,
             int64_t diversity_samples) {
  const auto cfg_json = config::run_config_to_json(cfg);
  banner(cfg_json);
  set_num_threads(cfg.threads);
  const std::string data_path =
      cfg.eval_dataset.empty() ? cfg.dataset : cfg.eval_dataset;
  auto data = synth::read_dataset(data_path);

  model::Model<float> m(cfg.model, mix_seed(cfg.seed, hash_str("init")));
  auto meta = diff::load_checkpoint(checkpoint, m.params(),
                                    static_cast<diff::AdamState<float>*>(nullptr));
  if (meta.variant != model::variant_name(cfg.model.variant))
    throw ConfigError("checkpoint variant '" + meta.variant +
                      "' does not match config '" +
                      model::variant_name(cfg.model.variant) + "'");

  evaluate::EvalOptions opts;
  opts.horizon = cfg.horizon;
  opts.n_samples = cfg.n_samples;
  opts.seed = cfg.seed;
  opts.diversity_samples = diversity_samples;
  if (diversity_samples == 1)
    throw ConfigError("diversity needs at least 2 samples");
  auto rep = evaluate::evaluate_model(m, data, opts);

  fs::create_directories(cfg.out_dir);
  const std::string hash = config::config_hash(cfg_json);
  evaluate::write_report_json(cfg.out_dir + "/report.json", rep, hash);
  evaluate::write_curves_csv(cfg.out_dir + "/curves.csv", rep, hash);
  const std::string table = evaluate::report_text_table(rep);
  {
    std::ofstream os(cfg.out_dir + "/tables.txt");
    os << table;
  }
  std::cout << table;
  for (const auto& n : rep.notices) std::cerr << "notice: " << n << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structure-and-motion decomposed stochastic video prediction"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, checkpoint, resume;
  int threads = 4;
  int64_t sequence_index = 0, diversity = 0, override_steps = -1;
  int64_t override_samples = -1, override_horizon = -1;
  uint64_t override_seed = 0;
  bool have_seed = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "scene spec JSON")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--threads", threads, "worker threads");

  auto add_common = [&](CLI::App* cmd, bool need_ckpt) {
    cmd->add_option("--config", config_path, "run config JSON")->required();
    if (need_ckpt)
      cmd->add_option("--checkpoint", checkpoint, "checkpoint file")
          ->required();
    cmd->add_option("--out", out_dir, "override output directory");
    cmd->add_option("--dataset", spec_path, "override dataset directory");
    cmd->add_option("--threads", threads, "worker threads");
    cmd->add_option("--samples", override_samples, "override n_samples");
    cmd->add_option("--horizon", override_horizon, "override horizon");
    cmd->add_option_function<uint64_t>(
        "--seed",
        [&](const uint64_t& v) {
          override_seed = v;
          have_seed = true;
        },
        "override seed");
  };

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, false);
  train_cmd->add_option("--resume", resume, "resume from checkpoint");
  train_cmd->add_option("--steps", override_steps, "override training steps");

  auto* rollout_cmd = app.add_subcommand("rollout", "dump stochastic futures");
  add_common(rollout_cmd, true);
  rollout_cmd->add_option("--sequence", sequence_index, "sequence index");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--diversity", diversity,
                       "sample count for diversity maps (>= 2)");

  auto* verify_cmd = app.add_subcommand("verify", "run the invariant suite");
  int64_t fd_seeds = 20, gt_sequences = 20;
  uint64_t verify_seed = 0;
  verify_cmd->add_option("--fd-seeds", fd_seeds, "seeds per gradient check");
  verify_cmd->add_option("--gt-sequences", gt_sequences,
                         "sequences for the consistency sweep");
  verify_cmd->add_option("--seed", verify_seed, "suite seed");
  verify_cmd->add_option("--threads", threads, "worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    set_num_threads(threads);
    if (gen->parsed()) return cmd_gen(spec_path, out_dir, threads);

    if (verify_cmd->parsed()) {
      verify::VerifyOptions vopts;
      vopts.seed = verify_seed;
      vopts.fd_seeds = fd_seeds;
      vopts.gt_sequences = gt_sequences;
      return verify::report(verify::run_all(vopts));
    }

    auto cfg = config::load_run_config(config_path);
    cfg.threads = threads;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!spec_path.empty()) cfg.dataset = spec_path;
    if (override_samples > 0) cfg.n_samples = override_samples;
    if (override_horizon > 0) cfg.horizon = override_horizon;
    if (have_seed) cfg.seed = override_seed;
    if (override_steps >= 0) cfg.train.steps = override_steps;

    if (train_cmd->parsed()) return cmd_train(cfg, resume);
    if (rollout_cmd->parsed())
      return cmd_rollout(cfg, checkpoint, sequence_index);
    if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoint, diversity);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
