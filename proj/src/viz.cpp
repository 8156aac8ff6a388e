#include "smvp/viz.hpp"

#include <cmath>

#include "smvp/synthdata.hpp"

namespace smvp::viz {

namespace {

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m),
          static_cast<float>(b + m)};
}

}  // namespace

Frame flow_to_rgb(const Frame& flow, double max_mag) {
  if (flow.rank() != 4 || flow.size(1) != 2)
    throw ShapeError("flow_to_rgb: expected [1,2,H,W]");
  const int64_t H = flow.size(2), W = flow.size(3), HW = H * W;
  double norm = max_mag;
  if (norm <= 0) {
    for (int64_t i = 0; i < HW; ++i)
      norm = std::max(norm, std::hypot(static_cast<double>(flow.value()[i]),
                                       static_cast<double>(flow.value()[HW + i])));
    if (norm <= 0) norm = 1.0;
  }
  Frame out({1, 3, H, W});
  for (int64_t i = 0; i < HW; ++i) {
    const double fx = flow.value()[i], fy = flow.value()[HW + i];
    const double mag = std::min(1.0, std::hypot(fx, fy) / norm);
    double ang = std::atan2(-fy, -fx) / (2.0 * M_PI) + 0.5;  // [0,1)
    if (ang >= 1.0) ang -= 1.0;
    const auto rgb = hsv_to_rgb(ang, mag, 1.0);
    for (int c = 0; c < 3; ++c) out.value()[c * HW + i] = rgb[c];
  }
  return out;
}

Frame depth_to_gray(const Frame& depth) {
  if (depth.rank() != 4 || depth.size(1) != 1)
    throw ShapeError("depth_to_gray: expected [1,1,H,W]");
  const int64_t HW = depth.size(2) * depth.size(3);
  double lo = 1e30, hi = 0;
  for (int64_t i = 0; i < HW; ++i) {
    const double inv = 1.0 / std::max(1e-6f, depth.value()[i]);
    lo = std::min(lo, inv);
    hi = std::max(hi, inv);
  }
  Frame out({1, 3, depth.size(2), depth.size(3)});
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  for (int64_t i = 0; i < HW; ++i) {
    const double inv = 1.0 / std::max(1e-6f, depth.value()[i]);
    const float g = static_cast<float>((inv - lo) / span);
    for (int c = 0; c < 3; ++c) out.value()[c * HW + i] = g;
  }
  return out;
}

Frame gray_to_rgb(const Frame& map) {
  if (map.rank() != 4 || map.size(1) != 1)
    throw ShapeError("gray_to_rgb: expected [1,1,H,W]");
  const int64_t HW = map.size(2) * map.size(3);
  Frame out({1, 3, map.size(2), map.size(3)});
  for (int64_t i = 0; i < HW; ++i) {
    const float g = std::min(1.f, std::max(0.f, map.value()[i]));
    for (int c = 0; c < 3; ++c) out.value()[c * HW + i] = g;
  }
  return out;
}

void write_montage(const std::string& path,
                   const std::vector<std::vector<Frame>>& rows) {
  if (rows.empty() || rows[0].empty())
    throw ShapeError("write_montage: no frames");
  const int64_t H = rows[0][0].size(2), W = rows[0][0].size(3);
  const int64_t n_cols = static_cast<int64_t>(rows[0].size());
  const int64_t n_rows = static_cast<int64_t>(rows.size());
  const int64_t MH = n_rows * (H + 1) + 1, MW = n_cols * (W + 1) + 1;
  std::vector<float> canvas(static_cast<size_t>(3 * MH * MW), 1.f);
  for (int64_t r = 0; r < n_rows; ++r) {
    if (static_cast<int64_t>(rows[static_cast<size_t>(r)].size()) != n_cols)
      throw ShapeError("write_montage: ragged rows");
    for (int64_t col = 0; col < n_cols; ++col) {
      const auto& f = rows[static_cast<size_t>(r)][static_cast<size_t>(col)];
      if (f.size(2) != H || f.size(3) != W)
        throw ShapeError("write_montage: mixed frame sizes");
      const int64_t oy = 1 + r * (H + 1), ox = 1 + col * (W + 1);
      for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W; ++x)
            canvas[static_cast<size_t>((c * MH + oy + y) * MW + ox + x)] =
                f.value()[(c * H + y) * W + x];
    }
  }
  synth::write_ppm(path, canvas.data(), MH, MW);
}

}  // namespace smvp::viz
