#pragma once

#include "smvp/metrics.hpp"
#include "smvp/model.hpp"
#include "smvp/synthdata.hpp"

namespace smvp::evaluate {

struct EvalOptions {
  int64_t horizon = 0;  // 0: model's n_pred_eval
  int64_t n_samples = 5;
  uint64_t seed = 7;
  bool with_depth = true;
  bool with_masked = true;
  /// Extra rollout for per-pixel diversity maps; 0 disables.
  int64_t diversity_samples = 0;
  int64_t ssim_window = 7;
};

struct Aggregate {
  double mean = 0;
  double stderr_ = 0;  // standard error over sequences
  int64_t n = 0;
};

struct EvalReport {
  int64_t n_sequences = 0;
  int64_t n_skipped = 0;  // too short for the horizon
  int64_t horizon = 0;
  Aggregate psnr, ssim;
  std::vector<Aggregate> psnr_per_step, ssim_per_step;
  bool has_masked = false;
  Aggregate fg_psnr, bg_psnr, fg_ssim, bg_ssim;
  bool has_depth = false;
  Aggregate abs_rel, sq_rel, rmse, rmse_log, delta1, delta2, delta3;
  bool has_diversity = false;
  double diversity_fg = 0, diversity_bg = 0;
  std::vector<size_t> best_indices;
  std::vector<std::string> notices;
};

/// Best-of-n protocol over a dataset: posterior burn-in on the context,
/// prior-driven futures, sample selection by mean PSNR, metrics on the
/// selected sample, aggregated as mean with standard error over sequences.
EvalReport evaluate_model(model::Model<float>& m,
                          const std::vector<synth::SequenceBatch>& data,
                          const EvalOptions& opts);

void write_report_json(const std::string& path, const EvalReport& report,
                       const std::string& config_hash);
void write_curves_csv(const std::string& path, const EvalReport& report,
                      const std::string& config_hash);
std::string report_text_table(const EvalReport& report);

}  // namespace smvp::evaluate
