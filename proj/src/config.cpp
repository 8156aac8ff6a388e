#include "smvp/config.hpp"

#include <fstream>

namespace smvp::config {

using json = nlohmann::json;

json model_config_to_json(const model::ModelConfig& m) {
  json j;
  j["variant"] = model::variant_name(m.variant);
  j["n_cond"] = m.n_cond;
  j["n_pred_train"] = m.n_pred_train;
  j["n_pred_eval"] = m.n_pred_eval;
  j["height"] = m.height;
  j["width"] = m.width;
  j["learning_rate"] = m.learning_rate;
  j["batch_size"] = m.batch_size;
  j["per_branch_recon"] = m.per_branch_recon;
  json d;
  d["stage_channels"] = m.dims.stage_channels;
  d["bottleneck_channels"] = m.dims.bottleneck_channels;
  d["head_channels"] = m.dims.head_channels;
  d["hidden_channels"] = m.dims.hidden_channels;
  d["latent_channels"] = m.dims.latent_channels;
  d["predictor_channels"] = m.dims.predictor_channels;
  d["se_reduction"] = m.dims.se_reduction;
  d["leaky_slope"] = m.dims.leaky_slope;
  d["depth_min"] = m.dims.depth_min;
  d["depth_max"] = m.dims.depth_max;
  d["max_flow"] = m.dims.max_flow;
  d["pose_rot_scale"] = m.dims.pose_rot_scale;
  d["pose_trans_scale"] = m.dims.pose_trans_scale;
  j["dims"] = std::move(d);
  return j;
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig m;
  try {
    m.variant = model::variant_from_name(
        j.value("variant", std::string("conditional")));
    m.n_cond = j.value("n_cond", m.n_cond);
    m.n_pred_train = j.value("n_pred_train", m.n_pred_train);
    m.n_pred_eval = j.value("n_pred_eval", m.n_pred_eval);
    m.height = j.value("height", m.height);
    m.width = j.value("width", m.width);
    m.learning_rate = j.value("learning_rate", m.learning_rate);
    m.batch_size = j.value("batch_size", m.batch_size);
    m.per_branch_recon = j.value("per_branch_recon", m.per_branch_recon);
    if (j.contains("dims")) {
      const auto& d = j.at("dims");
      auto& md = m.dims;
      if (d.contains("stage_channels"))
        md.stage_channels = d.at("stage_channels").get<std::vector<int64_t>>();
      md.bottleneck_channels =
          d.value("bottleneck_channels", md.bottleneck_channels);
      md.head_channels = d.value("head_channels", md.head_channels);
      md.hidden_channels = d.value("hidden_channels", md.hidden_channels);
      md.latent_channels = d.value("latent_channels", md.latent_channels);
      md.predictor_channels =
          d.value("predictor_channels", md.predictor_channels);
      md.se_reduction = d.value("se_reduction", md.se_reduction);
      md.leaky_slope = d.value("leaky_slope", md.leaky_slope);
      md.depth_min = d.value("depth_min", md.depth_min);
      md.depth_max = d.value("depth_max", md.depth_max);
      md.max_flow = d.value("max_flow", md.max_flow);
      md.pose_rot_scale = d.value("pose_rot_scale", md.pose_rot_scale);
      md.pose_trans_scale = d.value("pose_trans_scale", md.pose_trans_scale);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config parse error: ") + e.what());
  }
  m.validate();
  return m;
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["dataset"] = cfg.dataset;
  if (!cfg.eval_dataset.empty()) j["eval_dataset"] = cfg.eval_dataset;
  j["out_dir"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["n_samples"] = cfg.n_samples;
  if (cfg.horizon > 0) j["horizon"] = cfg.horizon;
  j["model"] = model_config_to_json(cfg.model);
  j["train"] = {{"steps", cfg.train.steps},
                {"checkpoint_every", cfg.train.checkpoint_every},
                {"log_every", cfg.train.log_every}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  try {
    cfg.dataset = j.value("dataset", std::string());
    cfg.eval_dataset = j.value("eval_dataset", std::string());
    cfg.out_dir = j.value("out_dir", std::string("out"));
    cfg.seed = j.value("seed", uint64_t(1));
    cfg.threads = j.value("threads", 4);
    cfg.n_samples = j.value("n_samples", int64_t(5));
    cfg.horizon = j.value("horizon", int64_t(0));
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) {
      const auto& t = j.at("train");
      cfg.train.steps = t.value("steps", cfg.train.steps);
      cfg.train.checkpoint_every =
          t.value("checkpoint_every", cfg.train.checkpoint_every);
      cfg.train.log_every = t.value("log_every", cfg.train.log_every);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config parse error: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("config '" + path + "' is not valid JSON");
  return run_config_from_json(j);
}

std::string config_hash(const json& j) {
  const std::string canonical = j.dump();  // nlohmann sorts object keys
  const uint64_t h = hash_str(canonical);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string build_id() {
#ifdef SMVP_BUILD_ID
  return SMVP_BUILD_ID;
#else
  return "unknown";
#endif
}

}  // namespace smvp::config
