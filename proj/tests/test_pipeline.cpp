#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "smvp/evaluate.hpp"
#include "smvp/trainer.hpp"
#include "smvp/viz.hpp"

using namespace smvp;
namespace fs = std::filesystem;
using F = diff::TensorT<float>;

namespace {

model::ModelConfig tiny_model() {
  model::ModelConfig cfg;
  cfg.variant = model::Variant::kConditional;
  cfg.n_cond = 2;
  cfg.n_pred_train = 2;
  cfg.n_pred_eval = 2;
  cfg.height = 8;
  cfg.width = 16;
  cfg.batch_size = 2;
  cfg.learning_rate = 3e-4;
  cfg.dims.stage_channels = {4, 6};
  cfg.dims.bottleneck_channels = 8;
  cfg.dims.head_channels = 4;
  cfg.dims.hidden_channels = 8;
  cfg.dims.latent_channels = 2;
  cfg.dims.predictor_channels = 8;
  cfg.dims.depth_min = 0.5;
  cfg.dims.depth_max = 20.0;
  cfg.dims.max_flow = 4.0;
  cfg.dims.pose_rot_scale = 0.02;
  cfg.dims.pose_trans_scale = 0.1;
  return cfg;
}

std::vector<synth::SequenceBatch> tiny_dataset(int n, uint64_t seed,
                                               int64_t frames = 8) {
  synth::SceneFamily family;
  family.frames = frames;
  family.height = 8;
  family.width = 16;
  family.min_objects = 0;
  family.max_objects = 1;
  std::vector<synth::SequenceBatch> data;
  for (int i = 0; i < n; ++i)
    data.push_back(
        synth::generate(synth::sample_scene_spec(mix_seed(seed, i), family)));
  return data;
}

std::vector<double> read_csv_totals(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::vector<double> totals;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("step", 0) == 0) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    totals.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
  }
  return totals;
}

}  // namespace

TEST_CASE("run config JSON round trip and hashes") {
  config::RunConfig cfg;
  cfg.dataset = "data/train";
  cfg.seed = 99;
  cfg.model = tiny_model();
  auto j = config::run_config_to_json(cfg);
  auto back = config::run_config_from_json(j);
  CHECK(back.dataset == cfg.dataset);
  CHECK(back.seed == cfg.seed);
  CHECK(back.model.variant == cfg.model.variant);
  CHECK(back.model.dims.stage_channels == cfg.model.dims.stage_channels);
  // Hash is canonical: same content, same hash; different content differs.
  CHECK(config::config_hash(j) ==
        config::config_hash(config::run_config_to_json(back)));
  back.seed = 100;
  CHECK(config::config_hash(config::run_config_to_json(back)) !=
        config::config_hash(j));
  CHECK_FALSE(config::build_id().empty());

  CHECK_THROWS_AS(
      config::model_config_from_json({{"variant", "bogus"}}), ConfigError);
  auto bad = config::model_config_to_json(tiny_model());
  bad["n_cond"] = 1;
  CHECK_THROWS_AS(config::model_config_from_json(bad), ConfigError);
}

TEST_CASE("window picking is deterministic and in range") {
  auto a = train::pick_windows(7, 3, 4, 5, 10, 6);
  auto b = train::pick_windows(7, 3, 4, 5, 10, 6);
  REQUIRE(a.size() == 4);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].sequence == b[i].sequence);
    CHECK(a[i].start == b[i].start);
    CHECK(a[i].sequence >= 0);
    CHECK(a[i].sequence < 5);
    CHECK(a[i].start >= 0);
    CHECK(a[i].start <= 4);
  }
  auto c = train::pick_windows(7, 4, 4, 5, 10, 6);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i)
    differs = differs || a[i].sequence != c[i].sequence ||
              a[i].start != c[i].start;
  CHECK(differs);
  CHECK_THROWS_AS(train::pick_windows(7, 0, 2, 3, 4, 6), ConfigError);
}

TEST_CASE("training writes logs and checkpoints; resume replays exactly") {
  const auto dir = fs::temp_directory_path() / "smvp_train_test";
  fs::remove_all(dir);
  auto data = tiny_dataset(3, 11);

  config::RunConfig cfg;
  cfg.model = tiny_model();
  cfg.seed = 5;
  cfg.out_dir = (dir / "a").string();
  cfg.train.steps = 6;
  cfg.train.checkpoint_every = 3;
  cfg.train.log_every = 1;

  // One continuous run.
  model::Model<float> m1(cfg.model, mix_seed(cfg.seed, hash_str("init")));
  diff::AdamState<float> opt1({cfg.model.learning_rate, 0.9, 0.999, 1e-8});
  auto res1 = train::run_training(m1, opt1, cfg, data);
  CHECK(res1.steps_done == 6);
  CHECK(fs::exists(res1.checkpoint_path));
  auto totals1 = read_csv_totals(res1.loss_log_path);
  REQUIRE(totals1.size() == 6);

  // Stop at 3 and resume to 6: the tail must match bit-for-bit.
  cfg.out_dir = (dir / "b").string();
  cfg.train.steps = 3;
  model::Model<float> m2(cfg.model, mix_seed(cfg.seed, hash_str("init")));
  diff::AdamState<float> opt2({cfg.model.learning_rate, 0.9, 0.999, 1e-8});
  auto res2a = train::run_training(m2, opt2, cfg, data);
  model::Model<float> m3(cfg.model, mix_seed(cfg.seed, hash_str("init")));
  diff::AdamState<float> opt3({cfg.model.learning_rate, 0.9, 0.999, 1e-8});
  auto meta = diff::load_checkpoint(res2a.checkpoint_path, m3.params(), &opt3);
  CHECK(meta.step == 3);
  cfg.train.steps = 6;
  auto res2b = train::run_training(m3, opt3, cfg, data, meta.step);
  auto totals2 = read_csv_totals(res2b.loss_log_path);
  REQUIRE(totals2.size() == 6);
  for (size_t i = 0; i < 6; ++i) CHECK(totals1[i] == totals2[i]);

  // Identical seeds: bit-identical losses across fresh runs.
  cfg.out_dir = (dir / "c").string();
  model::Model<float> m4(cfg.model, mix_seed(cfg.seed, hash_str("init")));
  diff::AdamState<float> opt4({cfg.model.learning_rate, 0.9, 0.999, 1e-8});
  auto res3 = train::run_training(m4, opt4, cfg, data);
  auto totals3 = read_csv_totals(res3.loss_log_path);
  CHECK(totals1 == totals3);
  fs::remove_all(dir);
}

TEST_CASE("depth-only loss log has no dynamic columns") {
  const auto dir = fs::temp_directory_path() / "smvp_train_do";
  fs::remove_all(dir);
  auto data = tiny_dataset(2, 13);
  config::RunConfig cfg;
  cfg.model = tiny_model();
  cfg.model.variant = model::Variant::kDepthOnly;
  cfg.out_dir = dir.string();
  cfg.train.steps = 2;
  cfg.train.log_every = 1;
  model::Model<float> m(cfg.model, 1);
  diff::AdamState<float> opt;
  train::run_training(m, opt, cfg, data);
  std::ifstream is(dir / "loss.csv");
  std::string comment, header;
  std::getline(is, comment);
  std::getline(is, header);
  CHECK(header == "step,total,recon,recon_s,kl_s,sigma");
  CHECK(comment.find("config=") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("evaluation protocol produces a coherent report") {
  auto data = tiny_dataset(3, 17, 8);
  auto cfg = tiny_model();
  model::Model<float> m(cfg, 3);
  evaluate::EvalOptions opts;
  opts.n_samples = 3;
  opts.horizon = 2;
  opts.diversity_samples = 4;
  auto rep = evaluate::evaluate_model(m, data, opts);
  CHECK(rep.n_sequences == 3);
  CHECK(rep.psnr.n == 3);
  CHECK(rep.psnr.mean > 0);
  CHECK(rep.psnr_per_step.size() == 2);
  CHECK(rep.has_depth);
  CHECK(rep.abs_rel.mean >= 0);
  CHECK(rep.has_diversity);
  CHECK(rep.best_indices.size() == 3);
  for (auto idx : rep.best_indices) CHECK(idx < 3);

  const auto dir = fs::temp_directory_path() / "smvp_eval_test";
  fs::create_directories(dir);
  evaluate::write_report_json((dir / "report.json").string(), rep, "cafe");
  evaluate::write_curves_csv((dir / "curves.csv").string(), rep, "cafe");
  std::ifstream is(dir / "report.json");
  auto j = nlohmann::json::parse(is);
  CHECK(j["config_hash"] == "cafe");
  CHECK(j["psnr"]["n"] == 3);
  auto text = evaluate::report_text_table(rep);
  CHECK(text.find("psnr") != std::string::npos);
  fs::remove_all(dir);

  // Horizon beyond the data: sequences are skipped with a notice.
  evaluate::EvalOptions too_long;
  too_long.horizon = 50;
  auto rep2 = evaluate::evaluate_model(m, data, too_long);
  CHECK(rep2.n_sequences == 0);
  CHECK(rep2.n_skipped == 3);
  CHECK_FALSE(rep2.notices.empty());
}

TEST_CASE("flow wheel and montage output") {
  auto zero = F::zeros({1, 2, 4, 4});
  auto rgb = viz::flow_to_rgb(zero, 1.0);
  for (auto v : rgb.value()) CHECK(v == 1.0f);  // zero flow renders white

  auto flow = F::zeros({1, 2, 4, 4});
  for (int64_t i = 0; i < 16; ++i) flow.value()[i] = 2.0f;  // pure +x
  auto rgb2 = viz::flow_to_rgb(flow, 2.0);
  bool saturated = false;
  for (auto v : rgb2.value()) saturated = saturated || v < 0.99f;
  CHECK(saturated);

  Rng rng(3);
  auto depth = F::rand_uniform({1, 1, 4, 4}, rng, 1.f, 9.f);
  auto gray = viz::depth_to_gray(depth);
  CHECK(gray.shape() == Shape{1, 3, 4, 4});

  const auto path = fs::temp_directory_path() / "smvp_montage.ppm";
  viz::write_montage(path.string(), {{rgb, rgb2}, {gray, gray}});
  int64_t H = 0, W = 0;
  auto img = synth::read_ppm(path.string(), H, W);
  CHECK(H == 2 * 5 + 1);
  CHECK(W == 2 * 5 + 1);
  fs::remove(path.string());
}

TEST_CASE("NaN abort keeps the last good checkpoint and dumps a breakdown") {
  const auto dir = fs::temp_directory_path() / "smvp_nan_abort";
  fs::remove_all(dir);
  auto data = tiny_dataset(2, 19);
  config::RunConfig cfg;
  cfg.model = tiny_model();
  cfg.out_dir = dir.string();
  cfg.train.steps = 4;
  cfg.train.checkpoint_every = 1;
  model::Model<float> m(cfg.model, 1);
  diff::AdamState<float> opt;
  // Run two good steps, then poison a parameter.
  cfg.train.steps = 2;
  auto res = train::run_training(m, opt, cfg, data);
  CHECK_FALSE(res.nan_abort);
  m.params().at("enc.bott0.weight").value()[0] =
      std::numeric_limits<float>::quiet_NaN();
  cfg.train.steps = 4;
  auto res2 = train::run_training(m, opt, cfg, data, 2);
  CHECK(res2.nan_abort);
  CHECK(fs::exists(dir / "nan_abort.txt"));
  CHECK(fs::exists(dir / "checkpoint_latest.ckpt"));
  fs::remove_all(dir);
}
