#pragma once

#include <json.hpp>

#include "smvp/model.hpp"

namespace smvp::config {

struct TrainParams {
  int64_t steps = 2000;
  int64_t checkpoint_every = 500;
  int64_t log_every = 10;
};

/// One run = one JSON document. Flags may override individual fields.
struct RunConfig {
  std::string dataset;
  std::string eval_dataset;
  std::string out_dir = "out";
  uint64_t seed = 1;
  int threads = 4;
  int64_t n_samples = 5;
  int64_t horizon = 0;  // 0: use model.n_pred_eval
  model::ModelConfig model;
  TrainParams train;
};

nlohmann::json model_config_to_json(const model::ModelConfig& m);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// FNV-1a over the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const nlohmann::json& j);
std::string build_id();

}  // namespace smvp::config
