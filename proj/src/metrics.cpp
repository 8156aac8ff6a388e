#include "smvp/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace smvp::metrics {

namespace {

void require_frames(const Frame& a, const Frame& b, const char* op) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 4) throw ShapeError(std::string(op) + ": expected [B,C,H,W]");
  for (const auto* t : {&a, &b})
    for (float v : t->value())
      if (v < -1e-5f || v > 1.f + 1e-5f)
        throw NumericError(std::string(op) + ": values outside [0,1]");
}

double mse_of(const Frame& a, const Frame& b) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.value()[i]) -
                     static_cast<double>(b.value()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

}  // namespace

double psnr(const Frame& a, const Frame& b) {
  require_frames(a, b, "psnr");
  const double mse = mse_of(a, b);
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Frame& a, const Frame& b, int64_t window) {
  require_frames(a, b, "ssim");
  const int64_t B = a.size(0), C = a.size(1), H = a.size(2), W = a.size(3);
  if (window % 2 == 0 || window < 3)
    throw ShapeError("ssim: window must be odd and >= 3");
  if (window > std::min(H, W))
    throw ShapeError("ssim: window " + std::to_string(window) +
                     " exceeds image extent " + std::to_string(std::min(H, W)));
  const int64_t r = window / 2;
  // Gaussian weights, sigma = 1.5.
  std::vector<double> wts(static_cast<size_t>(window * window));
  double wsum = 0;
  for (int64_t dy = -r; dy <= r; ++dy)
    for (int64_t dx = -r; dx <= r; ++dx) {
      const double g = std::exp(-(static_cast<double>(dx * dx + dy * dy)) /
                                (2.0 * 1.5 * 1.5));
      wts[static_cast<size_t>((dy + r) * window + dx + r)] = g;
      wsum += g;
    }
  for (auto& w : wts) w /= wsum;

  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int64_t count = 0;
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const float* x = a.data() + bc * H * W;
    const float* y = b.data() + bc * H * W;
    for (int64_t cy = r; cy < H - r; ++cy)
      for (int64_t cx = r; cx < W - r; ++cx) {
        double mx = 0, my = 0;
        for (int64_t dy = -r; dy <= r; ++dy)
          for (int64_t dx = -r; dx <= r; ++dx) {
            const double w = wts[static_cast<size_t>((dy + r) * window + dx + r)];
            mx += w * x[(cy + dy) * W + cx + dx];
            my += w * y[(cy + dy) * W + cx + dx];
          }
        double vx = 0, vy = 0, vxy = 0;
        for (int64_t dy = -r; dy <= r; ++dy)
          for (int64_t dx = -r; dx <= r; ++dx) {
            const double w = wts[static_cast<size_t>((dy + r) * window + dx + r)];
            const double ex = x[(cy + dy) * W + cx + dx] - mx;
            const double ey = y[(cy + dy) * W + cx + dx] - my;
            vx += w * ex * ex;
            vy += w * ey * ey;
            vxy += w * ex * ey;
          }
        total += ((2 * mx * my + c1) * (2 * vxy + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

DepthMetrics depth_metrics(const Frame& pred, const Frame& gt,
                           const Frame* valid_mask, bool median_scale) {
  if (!same_shape(pred.shape(), gt.shape()))
    throw ShapeError("depth_metrics: shape mismatch");
  std::vector<double> p, g;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (valid_mask && valid_mask->value()[i] < 0.5f) continue;
    const double gv = gt.value()[i];
    if (gv <= 0.0) continue;
    p.push_back(pred.value()[i]);
    g.push_back(gv);
  }
  if (p.empty()) throw NumericError("depth_metrics: empty valid mask");
  DepthMetrics m;
  if (median_scale) {
    auto med = [](std::vector<double> v) {
      std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
      return v[v.size() / 2];
    };
    const double mp = med(p);
    if (mp <= 0.0) throw NumericError("depth_metrics: non-positive median");
    m.scale = med(g) / mp;
    for (auto& v : p) v *= m.scale;
  }
  const double n = static_cast<double>(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - g[i];
    m.abs_rel += std::abs(d) / g[i];
    m.sq_rel += d * d / g[i];
    m.rmse += d * d;
    const double dl = std::log(std::max(1e-12, p[i])) - std::log(g[i]);
    m.rmse_log += dl * dl;
    const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
    m.delta1 += ratio < 1.25;
    m.delta2 += ratio < 1.25 * 1.25;
    m.delta3 += ratio < 1.25 * 1.25 * 1.25;
  }
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

MaskedMetrics masked_metrics(const Frame& pred, const Frame& gt,
                             const Frame& fg_mask, int64_t ssim_window) {
  require_frames(pred, gt, "masked_metrics");
  const int64_t B = pred.size(0), C = pred.size(1), HW = pred.size(2) * pred.size(3);
  if (!(fg_mask.rank() == 4 && fg_mask.size(0) == B && fg_mask.size(1) == 1 &&
        fg_mask.numel() == B * HW))
    throw ShapeError("masked_metrics: mask must be [B,1,H,W]");
  for (float v : fg_mask.value())
    if (v != 0.f && v != 1.f)
      throw NumericError("masked_metrics: mask must be binary");

  auto region = [&](bool fg) -> std::optional<RegionMetrics> {
    int64_t pixels = 0;
    Frame p2 = pred.detach(), g2 = gt.detach();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < HW; ++i) {
        const bool in = fg_mask.value()[b * HW + i] > 0.5f;
        if (in == fg) {
          ++pixels;
          continue;
        }
        for (int64_t c = 0; c < C; ++c) {
          p2.value()[(b * C + c) * HW + i] = 0.5f;  // mean gray
          g2.value()[(b * C + c) * HW + i] = 0.5f;
        }
      }
    if (pixels == 0) return std::nullopt;
    RegionMetrics r;
    r.pixels = pixels;
    r.psnr = psnr(p2, g2);
    r.ssim = ssim(p2, g2, ssim_window);
    return r;
  };
  return {region(true), region(false)};
}

size_t best_of_n(const std::vector<std::vector<Frame>>& sample_frames,
                 const std::vector<Frame>& gt_frames) {
  if (sample_frames.empty()) throw ShapeError("best_of_n: no samples");
  size_t best = 0;
  double best_score = -1;
  for (size_t s = 0; s < sample_frames.size(); ++s) {
    if (sample_frames[s].size() != gt_frames.size())
      throw ShapeError("best_of_n: window length mismatch");
    double acc = 0;
    for (size_t t = 0; t < gt_frames.size(); ++t)
      acc += psnr(sample_frames[s][t], gt_frames[t]);
    const double score = acc / static_cast<double>(gt_frames.size());
    if (score > best_score) {  // strict: ties keep the lowest index
      best_score = score;
      best = s;
    }
  }
  return best;
}

std::vector<Frame> diversity_std(
    const std::vector<std::vector<Frame>>& sample_frames) {
  if (sample_frames.size() < 2)
    throw ShapeError("diversity_std: needs at least two samples");
  const size_t S = sample_frames.size();
  const size_t T = sample_frames[0].size();
  std::vector<Frame> maps;
  for (size_t t = 0; t < T; ++t) {
    const auto& f0 = sample_frames[0][t];
    const int64_t C = f0.size(1), HW = f0.size(2) * f0.size(3);
    Frame map({1, 1, f0.size(2), f0.size(3)});
    for (int64_t i = 0; i < HW; ++i) {
      double acc = 0;
      for (int64_t c = 0; c < C; ++c) {
        double mean = 0, m2 = 0;
        for (size_t s = 0; s < S; ++s) {
          const double v = sample_frames[s][t].value()[c * HW + i];
          mean += v;
        }
        mean /= static_cast<double>(S);
        for (size_t s = 0; s < S; ++s) {
          const double v = sample_frames[s][t].value()[c * HW + i];
          m2 += (v - mean) * (v - mean);
        }
        acc += std::sqrt(m2 / static_cast<double>(S));  // population std
      }
      map.value()[i] = static_cast<float>(acc / static_cast<double>(C));
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

std::optional<double> masked_mean(const Frame& map, const Frame& mask,
                                  bool inside) {
  if (map.numel() != mask.numel())
    throw ShapeError("masked_mean: map/mask size mismatch");
  double acc = 0;
  int64_t n = 0;
  for (int64_t i = 0; i < map.numel(); ++i) {
    const bool in = mask.value()[i] > 0.5f;
    if (in != inside) continue;
    acc += map.value()[i];
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

}  // namespace smvp::metrics
