#pragma once

#include <optional>

#include "smvp/tensor.hpp"

namespace smvp::metrics {

using Frame = diff::TensorT<float>;

/// Peak signal-to-noise ratio in dB over [0,1] frames, capped at 100.
double psnr(const Frame& a, const Frame& b);

/// Mean SSIM with a Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
/// averaged over valid window centers, channels, and batch.
double ssim(const Frame& a, const Frame& b, int64_t window = 7);

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // delta < 1.25^k
  double scale = 1.0;  // median scaling factor applied to pred
};

/// The seven standard monocular depth metrics. Median scaling (on by
/// default) removes the global scale ambiguity. valid_mask may be null.
DepthMetrics depth_metrics(const Frame& pred, const Frame& gt,
                           const Frame* valid_mask, bool median_scale = true);

struct RegionMetrics {
  double psnr = 0, ssim = 0;
  int64_t pixels = 0;
};

struct MaskedMetrics {
  std::optional<RegionMetrics> fg, bg;
};

/// Foreground/background evaluation: out-of-region pixels of both frames are
/// replaced by mean gray (0.5) before computing PSNR/SSIM. Empty regions are
/// reported absent.
MaskedMetrics masked_metrics(const Frame& pred, const Frame& gt,
                             const Frame& fg_mask, int64_t ssim_window = 7);

/// Index of the sample maximizing mean PSNR against the ground truth over
/// the prediction window; ties break toward the lowest index.
size_t best_of_n(const std::vector<std::vector<Frame>>& sample_frames,
                 const std::vector<Frame>& gt_frames);

/// Per-step per-pixel population standard deviation across samples of the
/// final frames, averaged over channels. Requires at least two samples.
std::vector<Frame> diversity_std(
    const std::vector<std::vector<Frame>>& sample_frames);

/// Mean of a per-pixel map over mask-selected pixels; mask entries > 0.5
/// select. Returns absent when the region is empty.
std::optional<double> masked_mean(const Frame& map, const Frame& mask,
                                  bool inside);

}  // namespace smvp::metrics
