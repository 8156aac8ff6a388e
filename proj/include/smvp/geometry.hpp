#pragma once

#include <array>

#include "smvp/ops.hpp"

namespace smvp::geom {

using diff::TensorT;

/// Pinhole intrinsics in pixels. Convention: right-handed camera frame with
/// x right, y down, z forward; pixel (0,0) at top-left, pixel centers on
/// integer coordinates.
struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;

  void validate(int64_t width, int64_t height) const {
    if (fx <= 0 || fy <= 0)
      throw NumericError("intrinsics: focal lengths must be positive");
    if (cx < 0 || cx > static_cast<double>(width - 1) || cy < 0 ||
        cy > static_cast<double>(height - 1))
      throw NumericError("intrinsics: principal point outside image bounds");
  }
};

namespace detail {

// Rodrigues coefficients a = sin(t)/t, b = (1-cos(t))/t^2 and the
// theta-normalized derivatives c3 = a'(t)/t, c4 = b'(t)/t, with series
// below the small-angle threshold.
struct RotCoeffs {
  double a, b, c3, c4;
};

inline RotCoeffs rot_coeffs(double theta2) {
  RotCoeffs c;
  if (theta2 < 1e-16) {  // |r| < 1e-8: series expansion
    c.a = 1.0 - theta2 / 6.0;
    c.b = 0.5 - theta2 / 24.0;
    c.c3 = -1.0 / 3.0 + theta2 / 30.0;
    c.c4 = -1.0 / 12.0 + theta2 / 180.0;
  } else {
    const double t = std::sqrt(theta2);
    const double s = std::sin(t), co = std::cos(t);
    c.a = s / t;
    c.b = (1.0 - co) / theta2;
    c.c3 = (t * co - s) / (theta2 * t);
    c.c4 = (t * s - 2.0 * (1.0 - co)) / (theta2 * theta2);
  }
  return c;
}

inline std::array<double, 9> rodrigues(const double* r) {
  const double theta2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
  const RotCoeffs c = rot_coeffs(theta2);
  const double sx = r[0], sy = r[1], sz = r[2];
  // R = I + a*S + b*S^2, S = skew(r)
  return {1.0 + c.b * (-sy * sy - sz * sz), -c.a * sz + c.b * sx * sy,
          c.a * sy + c.b * sx * sz,         c.a * sz + c.b * sx * sy,
          1.0 + c.b * (-sx * sx - sz * sz), -c.a * sx + c.b * sy * sz,
          -c.a * sy + c.b * sx * sz,        c.a * sx + c.b * sy * sz,
          1.0 + c.b * (-sx * sx - sy * sy)};
}

}  // namespace detail

/// 6-DoF rigid transform: axis-angle rotation (radians) plus translation,
/// acting on points as Y = R X + t.
struct Pose {
  std::array<double, 3> rotation{0, 0, 0};
  std::array<double, 3> translation{0, 0, 0};

  static Pose identity() { return {}; }

  std::array<double, 9> rotation_matrix() const {
    return detail::rodrigues(rotation.data());
  }

  Pose inverse() const {
    const auto R = rotation_matrix();
    Pose inv;
    for (int i = 0; i < 3; ++i) inv.rotation[i] = -rotation[i];
    // -R^T t
    for (int i = 0; i < 3; ++i)
      inv.translation[i] = -(R[0 * 3 + i] * translation[0] +
                             R[1 * 3 + i] * translation[1] +
                             R[2 * 3 + i] * translation[2]);
    return inv;
  }

  /// Composition: (this ∘ other)(X) = this(other(X)).
  Pose compose(const Pose& other) const;

  std::array<double, 6> as_array() const {
    return {rotation[0], rotation[1], rotation[2],
            translation[0], translation[1], translation[2]};
  }

  double rotation_magnitude() const {
    return std::sqrt(rotation[0] * rotation[0] + rotation[1] * rotation[1] +
                     rotation[2] * rotation[2]);
  }
};

namespace detail {

inline std::array<double, 3> axis_angle_from_matrix(
    const std::array<double, 9>& R) {
  const double tr = R[0] + R[4] + R[8];
  const double cos_t = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
  const double t = std::acos(cos_t);
  const std::array<double, 3> skew = {R[7] - R[5], R[2] - R[6], R[3] - R[1]};
  if (t < 1e-8) return {skew[0] / 2.0, skew[1] / 2.0, skew[2] / 2.0};
  if (t > 3.141592653489) {
    // Near pi: axis from the diagonal of (R + I)/2.
    std::array<double, 3> ax = {std::sqrt(std::max(0.0, (R[0] + 1.0) / 2.0)),
                                std::sqrt(std::max(0.0, (R[4] + 1.0) / 2.0)),
                                std::sqrt(std::max(0.0, (R[8] + 1.0) / 2.0))};
    if (skew[0] < 0) ax[0] = -ax[0];
    if (skew[1] < 0) ax[1] = -ax[1];
    if (skew[2] < 0) ax[2] = -ax[2];
    return {ax[0] * t, ax[1] * t, ax[2] * t};
  }
  const double s = t / (2.0 * std::sin(t));
  return {skew[0] * s, skew[1] * s, skew[2] * s};
}

}  // namespace detail

inline Pose Pose::compose(const Pose& other) const {
  const auto R1 = rotation_matrix();
  const auto R2 = other.rotation_matrix();
  std::array<double, 9> R{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) R[i * 3 + j] += R1[i * 3 + k] * R2[k * 3 + j];
  Pose out;
  out.rotation = detail::axis_angle_from_matrix(R);
  for (int i = 0; i < 3; ++i)
    out.translation[i] = R1[i * 3 + 0] * other.translation[0] +
                         R1[i * 3 + 1] * other.translation[1] +
                         R1[i * 3 + 2] * other.translation[2] + translation[i];
  return out;
}

template <class T>
TensorT<T> pose_to_tensor(const Pose& p, int64_t batch = 1) {
  std::vector<T> v;
  v.reserve(static_cast<size_t>(batch) * 6);
  for (int64_t b = 0; b < batch; ++b)
    for (double x : p.as_array()) v.push_back(static_cast<T>(x));
  return TensorT<T>::from_vec({batch, 6}, std::move(v));
}

template <class T>
Pose pose_from_tensor(const TensorT<T>& t, int64_t b = 0) {
  Pose p;
  for (int i = 0; i < 3; ++i) {
    p.rotation[i] = static_cast<double>(t.value()[b * 6 + i]);
    p.translation[i] = static_cast<double>(t.value()[b * 6 + 3 + i]);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Differentiable geometry primitives. Per-element math runs in double
// regardless of T so pixel-scale results stay exact under float storage.

/// Sampling positions considered out-of-frustum carry this sentinel; the
/// bilinear sampler treats them as zero contribution with zero gradient.
inline constexpr double kOutOfFrustum = -1e9;
inline constexpr double kFrustumEps = 1e-6;

/// Axis-angle [B,3] -> rotation matrices [B,3,3] (Rodrigues).
template <class T>
TensorT<T> rotation_from_axis_angle(const TensorT<T>& r) {
  if (r.rank() != 2 || r.size(1) != 3)
    throw ShapeError("rotation_from_axis_angle: expected [B,3], got " +
                     shape_str(r.shape()));
  const int64_t B = r.size(0);
  auto out = TensorT<T>::make_op(
      {B, 3, 3}, "rotation_from_axis_angle", {r}, [B](diff::TensorNode<T>& self) {
        auto& pr = *self.parents[0];
        if (!pr.requires_grad) return;
        static const double E[3][9] = {
            {0, 0, 0, 0, 0, -1, 0, 1, 0},
            {0, 0, 1, 0, 0, 0, -1, 0, 0},
            {0, -1, 0, 1, 0, 0, 0, 0, 0}};
        for (int64_t b = 0; b < B; ++b) {
          double rv[3];
          for (int i = 0; i < 3; ++i)
            rv[i] = static_cast<double>(pr.value[b * 3 + i]);
          const double theta2 = rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2];
          const auto c = detail::rot_coeffs(theta2);
          double S[9] = {0, -rv[2], rv[1], rv[2], 0, -rv[0], -rv[1], rv[0], 0};
          double S2[9] = {};
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
              for (int k = 0; k < 3; ++k)
                S2[i * 3 + j] += S[i * 3 + k] * S[k * 3 + j];
          const T* g = self.grad.data() + b * 9;
          for (int kk = 0; kk < 3; ++kk) {
            // dR/dr_k = c3*r_k*S + a*E_k + c4*r_k*S^2 + b*(E_k S + S E_k)
            double dR[9];
            const double* Ek = E[kk];
            double EkS[9] = {}, SEk[9] = {};
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j)
                for (int m = 0; m < 3; ++m) {
                  EkS[i * 3 + j] += Ek[i * 3 + m] * S[m * 3 + j];
                  SEk[i * 3 + j] += S[i * 3 + m] * Ek[m * 3 + j];
                }
            for (int i = 0; i < 9; ++i)
              dR[i] = c.c3 * rv[kk] * S[i] + c.a * Ek[i] +
                      c.c4 * rv[kk] * S2[i] + c.b * (EkS[i] + SEk[i]);
            double acc = 0;
            for (int i = 0; i < 9; ++i)
              acc += static_cast<double>(g[i]) * dR[i];
            pr.grad[b * 3 + kk] += static_cast<T>(acc);
          }
        }
      });
  for (int64_t b = 0; b < B; ++b) {
    double rv[3];
    for (int i = 0; i < 3; ++i)
      rv[i] = static_cast<double>(r.value()[b * 3 + i]);
    const auto R = detail::rodrigues(rv);
    for (int i = 0; i < 9; ++i)
      out.value()[b * 9 + i] = static_cast<T>(R[i]);
  }
  return out;
}

/// Depth map [B,1,H,W] -> camera-frame points [B,3,H*W] along pixel rays.
template <class T>
TensorT<T> backproject(const TensorT<T>& depth, const Intrinsics& K) {
  diff::detail::require_rank4(depth, "backproject");
  if (depth.size(1) != 1)
    throw ShapeError("backproject: depth must be [B,1,H,W]");
  const int64_t B = depth.size(0), H = depth.size(2), W = depth.size(3);
  const int64_t N = H * W;
  auto out = TensorT<T>::make_op(
      {B, 3, N}, "backproject", {depth}, [B, H, W, N, K](diff::TensorNode<T>& self) {
        auto& pd = *self.parents[0];
        if (!pd.requires_grad) return;
        for (int64_t b = 0; b < B; ++b) {
          const T* g = self.grad.data() + b * 3 * N;
          T* dg = pd.grad.data() + b * N;
          for (int64_t i = 0; i < N; ++i) {
            const double u = static_cast<double>(i % W);
            const double v = static_cast<double>(i / W);
            const double rx = (u - K.cx) / K.fx;
            const double ry = (v - K.cy) / K.fy;
            dg[i] += static_cast<T>(static_cast<double>(g[i]) * rx +
                                    static_cast<double>(g[N + i]) * ry +
                                    static_cast<double>(g[2 * N + i]));
          }
        }
      });
  for (int64_t b = 0; b < B; ++b) {
    const T* d = depth.data() + b * N;
    T* o = out.value().data() + b * 3 * N;
    for (int64_t i = 0; i < N; ++i) {
      const double u = static_cast<double>(i % W);
      const double v = static_cast<double>(i / W);
      const double dd = static_cast<double>(d[i]);
      o[i] = static_cast<T>((u - K.cx) / K.fx * dd);
      o[N + i] = static_cast<T>((v - K.cy) / K.fy * dd);
      o[2 * N + i] = static_cast<T>(dd);
    }
  }
  return out;
}

/// Camera points [B,3,N] -> pixel positions [B,2,N]. Points with z below
/// kFrustumEps are flagged out-of-frustum (sentinel coordinates, zero
/// gradient).
template <class T>
TensorT<T> project_pinhole(const TensorT<T>& pts, const Intrinsics& K) {
  if (pts.rank() != 3 || pts.size(1) != 3)
    throw ShapeError("project_pinhole: expected [B,3,N], got " +
                     shape_str(pts.shape()));
  const int64_t B = pts.size(0), N = pts.size(2);
  auto out = TensorT<T>::make_op(
      {B, 2, N}, "project_pinhole", {pts}, [B, N, K](diff::TensorNode<T>& self) {
        auto& pp = *self.parents[0];
        if (!pp.requires_grad) return;
        for (int64_t b = 0; b < B; ++b) {
          const T* xv = pp.value.data() + b * 3 * N;
          const T* g = self.grad.data() + b * 2 * N;
          T* pg = pp.grad.data() + b * 3 * N;
          for (int64_t i = 0; i < N; ++i) {
            const double z = static_cast<double>(xv[2 * N + i]);
            if (z < kFrustumEps) continue;
            const double x = static_cast<double>(xv[i]);
            const double y = static_cast<double>(xv[N + i]);
            const double gu = static_cast<double>(g[i]);
            const double gv = static_cast<double>(g[N + i]);
            pg[i] += static_cast<T>(gu * K.fx / z);
            pg[N + i] += static_cast<T>(gv * K.fy / z);
            pg[2 * N + i] += static_cast<T>(-(gu * K.fx * x + gv * K.fy * y) /
                                            (z * z));
          }
        }
      });
  for (int64_t b = 0; b < B; ++b) {
    const T* xv = pts.data() + b * 3 * N;
    T* o = out.value().data() + b * 2 * N;
    for (int64_t i = 0; i < N; ++i) {
      const double z = static_cast<double>(xv[2 * N + i]);
      if (z < kFrustumEps) {
        o[i] = static_cast<T>(kOutOfFrustum);
        o[N + i] = static_cast<T>(kOutOfFrustum);
        continue;
      }
      o[i] = static_cast<T>(K.fx * static_cast<double>(xv[i]) / z + K.cx);
      o[N + i] =
          static_cast<T>(K.fy * static_cast<double>(xv[N + i]) / z + K.cy);
    }
  }
  return out;
}

namespace testing {
/// Verification negative control: perturbs the sampler's grid gradient.
inline bool corrupt_bilinear_grad = false;
}  // namespace testing

/// Bilinear sampling of src [B,C,H,W] at absolute pixel positions
/// grid [B,2,H',W'] (channel 0 = x, 1 = y). Zero-padding semantics:
/// out-of-bounds neighbors contribute zero value and zero gradient.
template <class T>
TensorT<T> bilinear_sample(const TensorT<T>& src, const TensorT<T>& grid) {
  diff::detail::require_rank4(src, "bilinear_sample");
  diff::detail::require_rank4(grid, "bilinear_sample");
  if (grid.size(1) != 2 || grid.size(0) != src.size(0))
    throw ShapeError("bilinear_sample: grid " + shape_str(grid.shape()) +
                     " vs src " + shape_str(src.shape()));
  const int64_t B = src.size(0), C = src.size(1), H = src.size(2),
                W = src.size(3);
  const int64_t Ho = grid.size(2), Wo = grid.size(3), No = Ho * Wo;
  auto out = TensorT<T>::make_op(
      {B, C, Ho, Wo}, "bilinear_sample", {src, grid},
      [B, C, H, W, No](diff::TensorNode<T>& self) {
        auto& ps = *self.parents[0];
        auto& pg = *self.parents[1];
        const double corrupt = testing::corrupt_bilinear_grad ? 1.01 : 1.0;
        for (int64_t b = 0; b < B; ++b) {
          const T* gv = pg.value.data() + b * 2 * No;
          for (int64_t i = 0; i < No; ++i) {
            const double gx = static_cast<double>(gv[i]);
            const double gy = static_cast<double>(gv[No + i]);
            if (gx < kOutOfFrustum / 2 || gy < kOutOfFrustum / 2) continue;
            const int64_t x0 = static_cast<int64_t>(std::floor(gx));
            const int64_t y0 = static_cast<int64_t>(std::floor(gy));
            const double fx = gx - static_cast<double>(x0);
            const double fy = gy - static_cast<double>(y0);
            const bool in00 = y0 >= 0 && y0 < H && x0 >= 0 && x0 < W;
            const bool in01 = y0 >= 0 && y0 < H && x0 + 1 >= 0 && x0 + 1 < W;
            const bool in10 = y0 + 1 >= 0 && y0 + 1 < H && x0 >= 0 && x0 < W;
            const bool in11 =
                y0 + 1 >= 0 && y0 + 1 < H && x0 + 1 >= 0 && x0 + 1 < W;
            double dgx = 0, dgy = 0;
            for (int64_t c = 0; c < C; ++c) {
              const int64_t off = (b * C + c) * H * W;
              const T* sv = ps.value.data() + off;
              const double go =
                  static_cast<double>(self.grad[(b * C + c) * No + i]);
              if (go == 0.0) continue;
              const double v00 = in00 ? static_cast<double>(sv[y0 * W + x0]) : 0;
              const double v01 =
                  in01 ? static_cast<double>(sv[y0 * W + x0 + 1]) : 0;
              const double v10 =
                  in10 ? static_cast<double>(sv[(y0 + 1) * W + x0]) : 0;
              const double v11 =
                  in11 ? static_cast<double>(sv[(y0 + 1) * W + x0 + 1]) : 0;
              if (ps.requires_grad) {
                T* sg = ps.grad.data() + off;
                if (in00) sg[y0 * W + x0] += static_cast<T>(go * (1 - fy) * (1 - fx));
                if (in01) sg[y0 * W + x0 + 1] += static_cast<T>(go * (1 - fy) * fx);
                if (in10) sg[(y0 + 1) * W + x0] += static_cast<T>(go * fy * (1 - fx));
                if (in11) sg[(y0 + 1) * W + x0 + 1] += static_cast<T>(go * fy * fx);
              }
              dgx += go * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
              dgy += go * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            if (pg.requires_grad) {
              pg.grad[b * 2 * No + i] += static_cast<T>(dgx * corrupt);
              pg.grad[b * 2 * No + No + i] += static_cast<T>(dgy * corrupt);
            }
          }
        }
      });
  for (int64_t b = 0; b < B; ++b) {
    const T* gv = grid.data() + b * 2 * No;
    for (int64_t i = 0; i < No; ++i) {
      const double gx = static_cast<double>(gv[i]);
      const double gy = static_cast<double>(gv[No + i]);
      if (gx < kOutOfFrustum / 2 || gy < kOutOfFrustum / 2) {
        for (int64_t c = 0; c < C; ++c)
          out.value()[(b * C + c) * No + i] = T(0);
        continue;
      }
      const int64_t x0 = static_cast<int64_t>(std::floor(gx));
      const int64_t y0 = static_cast<int64_t>(std::floor(gy));
      const double fx = gx - static_cast<double>(x0);
      const double fy = gy - static_cast<double>(y0);
      for (int64_t c = 0; c < C; ++c) {
        const T* sv = src.data() + (b * C + c) * H * W;
        auto pick = [&](int64_t yy, int64_t xx) -> double {
          return (yy >= 0 && yy < H && xx >= 0 && xx < W)
                     ? static_cast<double>(sv[yy * W + xx])
                     : 0.0;
        };
        const double v =
            (1 - fy) * ((1 - fx) * pick(y0, x0) + fx * pick(y0, x0 + 1)) +
            fy * ((1 - fx) * pick(y0 + 1, x0) + fx * pick(y0 + 1, x0 + 1));
        out.value()[(b * C + c) * No + i] = static_cast<T>(v);
      }
    }
  }
  return out;
}

/// Constant identity sampling grid [B,2,H,W] (x then y channel).
template <class T>
TensorT<T> identity_grid(int64_t B, int64_t H, int64_t W) {
  TensorT<T> g({B, 2, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        g.value()[((b * 2 + 0) * H + y) * W + x] = static_cast<T>(x);
        g.value()[((b * 2 + 1) * H + y) * W + x] = static_cast<T>(y);
      }
  return g;
}

/// For each target pixel u: backproject at depth d(u), apply the inverse of
/// the pose transform, and project with K. Differentiable w.r.t. depth and
/// the [B,6] pose (axis-angle, translation).
template <class T>
TensorT<T> sampling_grid_from_depth_pose(const TensorT<T>& depth,
                                         const TensorT<T>& pose,
                                         const Intrinsics& K) {
  if (pose.rank() != 2 || pose.size(1) != 6)
    throw ShapeError("sampling_grid_from_depth_pose: pose must be [B,6]");
  if (depth.has_nonfinite() || pose.has_nonfinite())
    throw NumericError("sampling_grid_from_depth_pose: non-finite input");
  const int64_t B = depth.size(0), H = depth.size(2), W = depth.size(3);
  auto r = diff::slice_channels(pose, 0, 3);
  auto t = diff::slice_channels(pose, 3, 6);
  // X_src = R(r)^T (X_tgt - t); R(r)^T = R(-r) for axis-angle.
  auto rot_inv = rotation_from_axis_angle(diff::neg(r));
  auto pts = backproject(depth, K);
  auto shifted = diff::add_cols(pts, t, -1.0);
  auto cam = diff::bmm(rot_inv, shifted);
  auto flat = project_pinhole(cam, K);
  return diff::reshape(flat, {B, 2, H, W});
}

/// Static-scene reconstruction of the target frame by sampling the previous
/// frame at depth/pose-induced positions.
template <class T>
TensorT<T> inverse_warp(const TensorT<T>& previous, const TensorT<T>& depth,
                        const TensorT<T>& pose, const Intrinsics& K) {
  for (T v : depth.value())
    if (!(v > T(0)))
      throw NumericError("inverse_warp: depth must be strictly positive");
  auto grid = sampling_grid_from_depth_pose(depth, pose, K);
  return bilinear_sample(previous, grid);
}

/// Warp by a residual flow field: out(u) = sample(src, u + flow(u)).
template <class T>
TensorT<T> flow_warp(const TensorT<T>& src, const TensorT<T>& flow) {
  diff::detail::require_rank4(flow, "flow_warp");
  if (flow.size(1) != 2)
    throw ShapeError("flow_warp: flow must be [B,2,H,W]");
  const int64_t H = flow.size(2), W = flow.size(3);
  const double diag = std::sqrt(static_cast<double>(H * H + W * W));
  for (int64_t i = 0; i < flow.numel(); ++i) {
    const double f = static_cast<double>(flow.value()[static_cast<size_t>(i)]);
    if (!std::isfinite(f) || std::abs(f) > diag)
      throw NumericError("flow_warp: flow magnitude exceeds image diagonal");
  }
  auto grid = diff::add(identity_grid<T>(flow.size(0), H, W), flow);
  return bilinear_sample(src, grid);
}

/// Displacement field induced purely by camera motion:
/// grid(depth, pose) - identity.
template <class T>
TensorT<T> ego_flow(const TensorT<T>& depth, const TensorT<T>& pose,
                    const Intrinsics& K) {
  auto grid = sampling_grid_from_depth_pose(depth, pose, K);
  return diff::sub(grid,
                   identity_grid<T>(depth.size(0), depth.size(2), depth.size(3)));
}

}  // namespace smvp::geom
