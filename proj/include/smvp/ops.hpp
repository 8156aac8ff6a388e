#pragma once

#include <cmath>
#include <string>

#include "smvp/detail/gemm.hpp"
#include "smvp/tensor.hpp"

namespace smvp::diff {

namespace detail {
template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                        const char* op) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void require_rank4(const TensorT<T>& a, const char* op) {
  if (a.rank() != 4)
    throw ShapeError(std::string(op) + ": expected rank-4 tensor, got " +
                     shape_str(a.shape()));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = TensorT<T>::make_op(a.shape(), "add", {a, b},
                                 [](TensorNode<T>& self) {
                                   for (int i = 0; i < 2; ++i) {
                                     auto& p = *self.parents[i];
                                     if (!p.requires_grad) continue;
                                     for (size_t j = 0; j < self.grad.size(); ++j)
                                       p.grad[j] += self.grad[j];
                                   }
                                 });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = a.value()[i] + b.value()[i];
  return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = TensorT<T>::make_op(
      a.shape(), "sub", {a, b}, [](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
          for (size_t j = 0; j < self.grad.size(); ++j) pa.grad[j] += self.grad[j];
        if (pb.requires_grad)
          for (size_t j = 0; j < self.grad.size(); ++j) pb.grad[j] -= self.grad[j];
      });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = a.value()[i] - b.value()[i];
  return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = TensorT<T>::make_op(
      a.shape(), "mul", {a, b}, [](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
          for (size_t j = 0; j < self.grad.size(); ++j)
            pa.grad[j] += self.grad[j] * pb.value[j];
        if (pb.requires_grad)
          for (size_t j = 0; j < self.grad.size(); ++j)
            pb.grad[j] += self.grad[j] * pa.value[j];
      });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = a.value()[i] * b.value()[i];
  return out;
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, double c) {
  auto out = TensorT<T>::make_op(a.shape(), "mul_scalar", {a},
                                 [c](TensorNode<T>& self) {
                                   auto& p = *self.parents[0];
                                   if (!p.requires_grad) return;
                                   for (size_t j = 0; j < self.grad.size(); ++j)
                                     p.grad[j] += self.grad[j] * static_cast<T>(c);
                                 });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = a.value()[i] * static_cast<T>(c);
  return out;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, double c) {
  auto out = TensorT<T>::make_op(a.shape(), "add_scalar", {a},
                                 [](TensorNode<T>& self) {
                                   auto& p = *self.parents[0];
                                   if (!p.requires_grad) return;
                                   for (size_t j = 0; j < self.grad.size(); ++j)
                                     p.grad[j] += self.grad[j];
                                 });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = a.value()[i] + static_cast<T>(c);
  return out;
}

template <class T>
TensorT<T> neg(const TensorT<T>& a) {
  return mul_scalar(a, -1.0);
}

template <class T>
TensorT<T> exp_t(const TensorT<T>& a) {
  auto out = TensorT<T>::make_op(a.shape(), "exp", {a},
                                 [](TensorNode<T>& self) {
                                   auto& p = *self.parents[0];
                                   if (!p.requires_grad) return;
                                   for (size_t j = 0; j < self.grad.size(); ++j)
                                     p.grad[j] += self.grad[j] * self.value[j];
                                 });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = std::exp(a.value()[i]);
  return out;
}

template <class T>
TensorT<T> log_t(const TensorT<T>& a) {
  auto out = TensorT<T>::make_op(a.shape(), "log", {a},
                                 [](TensorNode<T>& self) {
                                   auto& p = *self.parents[0];
                                   if (!p.requires_grad) return;
                                   for (size_t j = 0; j < self.grad.size(); ++j)
                                     p.grad[j] += self.grad[j] / p.value[j];
                                 });
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.value()[i] <= T(0))
      throw NumericError("log of non-positive value");
    out.value()[i] = std::log(a.value()[i]);
  }
  return out;
}

/// 1/x; rejects zeros.
template <class T>
TensorT<T> reciprocal(const TensorT<T>& a) {
  auto out = TensorT<T>::make_op(
      a.shape(), "reciprocal", {a}, [](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t j = 0; j < self.grad.size(); ++j)
          p.grad[j] -= self.grad[j] * self.value[j] * self.value[j];
      });
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.value()[i] == T(0)) throw NumericError("reciprocal of zero");
    out.value()[i] = T(1) / a.value()[i];
  }
  return out;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  auto out = TensorT<T>::make_op(
      a.shape(), "sigmoid", {a}, [](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t j = 0; j < self.grad.size(); ++j) {
          const T y = self.value[j];
          p.grad[j] += self.grad[j] * y * (T(1) - y);
        }
      });
  for (int64_t i = 0; i < a.numel(); ++i) {
    const T x = a.value()[i];
    out.value()[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                               : std::exp(x) / (T(1) + std::exp(x));
  }
  return out;
}

template <class T>
TensorT<T> tanh_t(const TensorT<T>& a) {
  auto out = TensorT<T>::make_op(
      a.shape(), "tanh", {a}, [](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t j = 0; j < self.grad.size(); ++j) {
          const T y = self.value[j];
          p.grad[j] += self.grad[j] * (T(1) - y * y);
        }
      });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = std::tanh(a.value()[i]);
  return out;
}

template <class T>
TensorT<T> leaky_relu(const TensorT<T>& a, double slope = 0.2) {
  auto out = TensorT<T>::make_op(
      a.shape(), "leaky_relu", {a}, [slope](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t j = 0; j < self.grad.size(); ++j)
          p.grad[j] += self.grad[j] * (p.value[j] > T(0)
                                           ? T(1)
                                           : static_cast<T>(slope));
      });
  for (int64_t i = 0; i < a.numel(); ++i) {
    const T x = a.value()[i];
    out.value()[i] = x > T(0) ? x : static_cast<T>(slope) * x;
  }
  return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
  return leaky_relu(a, 0.0);
}

/// Clamp with zero gradient outside [lo, hi].
template <class T>
TensorT<T> clamp(const TensorT<T>& a, double lo, double hi) {
  auto out = TensorT<T>::make_op(
      a.shape(), "clamp", {a}, [lo, hi](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (size_t j = 0; j < self.grad.size(); ++j) {
          const T x = p.value[j];
          if (x >= static_cast<T>(lo) && x <= static_cast<T>(hi))
            p.grad[j] += self.grad[j];
        }
      });
  for (int64_t i = 0; i < a.numel(); ++i)
    out.value()[i] = std::min(static_cast<T>(hi),
                              std::max(static_cast<T>(lo), a.value()[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Reductions. Accumulated in double regardless of T.

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
  auto out = TensorT<T>::make_op({1}, "sum", {a}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    const T g = self.grad[0];
    for (size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += g;
  });
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a.value()[i]);
  out.value()[0] = static_cast<T>(acc);
  return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  auto out =
      TensorT<T>::make_op({1}, "mean", {a}, [inv_n](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const T g = self.grad[0] * static_cast<T>(inv_n);
        for (size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += g;
      });
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a.value()[i]);
  out.value()[0] = static_cast<T>(acc * inv_n);
  return out;
}

/// Sums all non-batch dimensions: [B, ...] -> [B].
template <class T>
TensorT<T> sum_per_batch(const TensorT<T>& a) {
  if (a.rank() < 1) throw ShapeError("sum_per_batch: needs rank >= 1");
  const int64_t B = a.size(0);
  const int64_t inner = a.numel() / B;
  auto out = TensorT<T>::make_op(
      {B}, "sum_per_batch", {a}, [inner](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const int64_t batches = static_cast<int64_t>(self.grad.size());
        for (int64_t b = 0; b < batches; ++b) {
          const T g = self.grad[b];
          T* pg = p.grad.data() + b * inner;
          for (int64_t j = 0; j < inner; ++j) pg[j] += g;
        }
      });
  for (int64_t b = 0; b < B; ++b) {
    double acc = 0;
    const T* src = a.data() + b * inner;
    for (int64_t j = 0; j < inner; ++j) acc += static_cast<double>(src[j]);
    out.value()[b] = static_cast<T>(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

/// Copies into a new shape with identical element count; gradient passes
/// through unchanged.
template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  auto out = TensorT<T>::make_op(std::move(shape), "reshape", {a},
                                 [](TensorNode<T>& self) {
                                   auto& p = *self.parents[0];
                                   if (!p.requires_grad) return;
                                   for (size_t j = 0; j < self.grad.size(); ++j)
                                     p.grad[j] += self.grad[j];
                                 });
  out.value() = a.value();
  return out;
}

/// Concatenation along axis 1 for tensors of rank >= 2 agreeing on all other
/// dimensions.
template <class T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  const Shape& s0 = xs[0].shape();
  if (s0.size() < 2) throw ShapeError("concat_channels: needs rank >= 2");
  const int64_t B = s0[0];
  int64_t inner = 1;
  for (size_t i = 2; i < s0.size(); ++i) inner *= s0[i];
  int64_t c_total = 0;
  std::vector<int64_t> chans;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size() || s[0] != B)
      throw ShapeError("concat_channels: incompatible " + shape_str(s) +
                       " vs " + shape_str(s0));
    for (size_t i = 2; i < s.size(); ++i)
      if (s[i] != s0[i])
        throw ShapeError("concat_channels: incompatible " + shape_str(s) +
                         " vs " + shape_str(s0));
    chans.push_back(s[1]);
    c_total += s[1];
  }
  Shape out_shape = s0;
  out_shape[1] = c_total;
  auto out = TensorT<T>::make_op(
      out_shape, "concat_channels", xs,
      [chans, inner, B, c_total](TensorNode<T>& self) {
        int64_t c_off = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
          auto& p = *self.parents[pi];
          const int64_t C = chans[pi];
          if (p.requires_grad) {
            for (int64_t b = 0; b < B; ++b) {
              const T* g = self.grad.data() + (b * c_total + c_off) * inner;
              T* pg = p.grad.data() + b * C * inner;
              for (int64_t j = 0; j < C * inner; ++j) pg[j] += g[j];
            }
          }
          c_off += C;
        }
      });
  int64_t c_off = 0;
  for (size_t pi = 0; pi < xs.size(); ++pi) {
    const int64_t C = chans[pi];
    for (int64_t b = 0; b < B; ++b) {
      const T* src = xs[pi].data() + b * C * inner;
      T* dst = out.value().data() + (b * c_total + c_off) * inner;
      std::copy(src, src + C * inner, dst);
    }
    c_off += C;
  }
  return out;
}

/// Slice [from, to) along axis 1.
template <class T>
TensorT<T> slice_channels(const TensorT<T>& a, int64_t from, int64_t to) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("slice_channels: needs rank >= 2");
  if (from < 0 || to > s[1] || from >= to)
    throw ShapeError("slice_channels: bad range [" + std::to_string(from) +
                     "," + std::to_string(to) + ") of " + shape_str(s));
  const int64_t B = s[0], C = s[1];
  int64_t inner = 1;
  for (size_t i = 2; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[1] = to - from;
  auto out = TensorT<T>::make_op(
      out_shape, "slice_channels", {a},
      [from, to, B, C, inner](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const int64_t Cs = to - from;
        for (int64_t b = 0; b < B; ++b) {
          const T* g = self.grad.data() + b * Cs * inner;
          T* pg = p.grad.data() + (b * C + from) * inner;
          for (int64_t j = 0; j < Cs * inner; ++j) pg[j] += g[j];
        }
      });
  const int64_t Cs = to - from;
  for (int64_t b = 0; b < B; ++b) {
    const T* src = a.data() + (b * C + from) * inner;
    std::copy(src, src + Cs * inner, out.value().data() + b * Cs * inner);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial

template <class T>
TensorT<T> upsample_nearest(const TensorT<T>& a, int64_t factor) {
  detail::require_rank4(a, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const int64_t B = a.size(0), C = a.size(1), H = a.size(2), W = a.size(3);
  const int64_t Ho = H * factor, Wo = W * factor;
  auto out = TensorT<T>::make_op(
      {B, C, Ho, Wo}, "upsample_nearest", {a},
      [B, C, H, W, factor](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        const int64_t Ho = H * factor, Wo = W * factor;
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const T* g = self.grad.data() + bc * Ho * Wo;
          T* pg = p.grad.data() + bc * H * W;
          for (int64_t y = 0; y < Ho; ++y)
            for (int64_t x = 0; x < Wo; ++x)
              pg[(y / factor) * W + x / factor] += g[y * Wo + x];
        }
      });
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = a.data() + bc * H * W;
    T* dst = out.value().data() + bc * Ho * Wo;
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t x = 0; x < Wo; ++x)
        dst[y * Wo + x] = src[(y / factor) * W + x / factor];
  }
  return out;
}

template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& a) {
  detail::require_rank4(a, "global_avg_pool");
  const int64_t B = a.size(0), C = a.size(1), H = a.size(2), W = a.size(3);
  const double inv = 1.0 / static_cast<double>(H * W);
  auto out = TensorT<T>::make_op(
      {B, C, 1, 1}, "global_avg_pool", {a}, [B, C, H, W, inv](TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const T g = self.grad[bc] * static_cast<T>(inv);
          T* pg = p.grad.data() + bc * H * W;
          for (int64_t j = 0; j < H * W; ++j) pg[j] += g;
        }
      });
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = a.data() + bc * H * W;
    double acc = 0;
    for (int64_t j = 0; j < H * W; ++j) acc += static_cast<double>(src[j]);
    out.value()[bc] = static_cast<T>(acc * inv);
  }
  return out;
}

/// Per-channel gate: x[B,C,H,W] * s[B,C,1,1] (squeeze-excitation apply step).
template <class T>
TensorT<T> channel_scale(const TensorT<T>& x, const TensorT<T>& s) {
  detail::require_rank4(x, "channel_scale");
  if (!(s.rank() == 4 && s.size(0) == x.size(0) && s.size(1) == x.size(1) &&
        s.size(2) == 1 && s.size(3) == 1))
    throw ShapeError("channel_scale: gate shape " + shape_str(s.shape()) +
                     " does not match " + shape_str(x.shape()));
  const int64_t B = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
  auto out = TensorT<T>::make_op(
      x.shape(), "channel_scale", {x, s}, [B, C, HW](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& ps = *self.parents[1];
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const T* g = self.grad.data() + bc * HW;
          if (px.requires_grad) {
            const T sv = ps.value[bc];
            T* pg = px.grad.data() + bc * HW;
            for (int64_t j = 0; j < HW; ++j) pg[j] += g[j] * sv;
          }
          if (ps.requires_grad) {
            const T* xv = px.value.data() + bc * HW;
            double acc = 0;
            for (int64_t j = 0; j < HW; ++j)
              acc += static_cast<double>(g[j]) * static_cast<double>(xv[j]);
            ps.grad[bc] += static_cast<T>(acc);
          }
        }
      });
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T sv = s.value()[bc];
    const T* src = x.data() + bc * HW;
    T* dst = out.value().data() + bc * HW;
    for (int64_t j = 0; j < HW; ++j) dst[j] = src[j] * sv;
  }
  return out;
}

/// Broadcast multiply over channels: x[B,C,H,W] * m[B,1,H,W].
template <class T>
TensorT<T> mul_bcast_channel(const TensorT<T>& x, const TensorT<T>& m) {
  detail::require_rank4(x, "mul_bcast_channel");
  if (!(m.rank() == 4 && m.size(0) == x.size(0) && m.size(1) == 1 &&
        m.size(2) == x.size(2) && m.size(3) == x.size(3)))
    throw ShapeError("mul_bcast_channel: mask shape " + shape_str(m.shape()) +
                     " does not match " + shape_str(x.shape()));
  const int64_t B = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
  auto out = TensorT<T>::make_op(
      x.shape(), "mul_bcast_channel", {x, m}, [B, C, HW](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pm = *self.parents[1];
        for (int64_t b = 0; b < B; ++b) {
          const T* mv = pm.value.data() + b * HW;
          for (int64_t c = 0; c < C; ++c) {
            const int64_t off = (b * C + c) * HW;
            const T* g = self.grad.data() + off;
            if (px.requires_grad) {
              T* pg = px.grad.data() + off;
              for (int64_t j = 0; j < HW; ++j) pg[j] += g[j] * mv[j];
            }
            if (pm.requires_grad) {
              const T* xv = px.value.data() + off;
              T* mg = pm.grad.data() + b * HW;
              for (int64_t j = 0; j < HW; ++j) mg[j] += g[j] * xv[j];
            }
          }
        }
      });
  for (int64_t b = 0; b < B; ++b) {
    const T* mv = m.data() + b * HW;
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x.data() + (b * C + c) * HW;
      T* dst = out.value().data() + (b * C + c) * HW;
      for (int64_t j = 0; j < HW; ++j) dst[j] = src[j] * mv[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride,
                               int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// 2-d convolution: input [B,C,H,W], kernel [O,C,k,k], bias [O].
/// Output extent: floor((H + 2*pad - k)/stride) + 1.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int64_t stride, int64_t pad) {
  detail::require_rank4(x, "conv2d");
  detail::require_rank4(w, "conv2d");
  const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const int64_t O = w.size(0), k = w.size(2);
  if (w.size(1) != C)
    throw ShapeError("conv2d: input channels " + std::to_string(C) +
                     " vs kernel channels " + std::to_string(w.size(1)));
  if (w.size(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (!(b.rank() == 1 && b.size(0) == O))
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  if (k < 1 || stride < 1 || H + 2 * pad < k || W + 2 * pad < k)
    throw ShapeError("conv2d: invalid geometry k=" + std::to_string(k) +
                     " s=" + std::to_string(stride) + " p=" + std::to_string(pad) +
                     " on " + shape_str(x.shape()));
  const int64_t Ho = conv_out_extent(H, k, stride, pad);
  const int64_t Wo = conv_out_extent(W, k, stride, pad);
  const int64_t CKK = C * k * k, HoWo = Ho * Wo;

  auto out = TensorT<T>::make_op(
      {B, O, Ho, Wo}, "conv2d", {x, w, b},
      [B, C, H, W, O, k, stride, pad, Ho, Wo, CKK, HoWo](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<T> cols(static_cast<size_t>(HoWo * CKK));
        std::vector<T> dcols;
        if (px.requires_grad) dcols.resize(static_cast<size_t>(HoWo * CKK));
        for (int64_t bi = 0; bi < B; ++bi) {
          const T* g = self.grad.data() + bi * O * HoWo;
          if (pw.requires_grad)
            detail::im2col_pm(px.value.data() + bi * C * H * W, C, H, W, k,
                              stride, pad, Ho, Wo, cols.data());
          if (pw.requires_grad)
            detail::gemm(O, CKK, HoWo, g, cols.data(), pw.grad.data(), true);
          if (px.requires_grad) {
            detail::gemm_at(HoWo, CKK, O, g, pw.value.data(), dcols.data(),
                            false);
            detail::col2im_pm(dcols.data(), C, H, W, k, stride, pad, Ho, Wo,
                              px.grad.data() + bi * C * H * W);
          }
          if (pb.requires_grad) {
            for (int64_t o = 0; o < O; ++o) {
              double acc = 0;
              const T* go = g + o * HoWo;
              for (int64_t j = 0; j < HoWo; ++j) acc += static_cast<double>(go[j]);
              pb.grad[o] += static_cast<T>(acc);
            }
          }
        }
      });

  std::vector<T> cols(static_cast<size_t>(HoWo * CKK));
  for (int64_t bi = 0; bi < B; ++bi) {
    detail::im2col_pm(x.data() + bi * C * H * W, C, H, W, k, stride, pad, Ho,
                      Wo, cols.data());
    T* dst = out.value().data() + bi * O * HoWo;
    detail::gemm_bt(O, HoWo, CKK, w.data(), cols.data(), dst, false);
    for (int64_t o = 0; o < O; ++o) {
      const T bv = b.value()[o];
      T* row = dst + o * HoWo;
      for (int64_t j = 0; j < HoWo; ++j) row[j] += bv;
    }
  }
  return out;
}

/// Transposed convolution: input [B,C,H,W], kernel [C,O,k,k], bias [O].
/// Output extent: (H - 1)*stride - 2*pad + k.
template <class T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w,
                            const TensorT<T>& b, int64_t stride, int64_t pad) {
  detail::require_rank4(x, "conv_transpose2d");
  detail::require_rank4(w, "conv_transpose2d");
  const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const int64_t O = w.size(1), k = w.size(2);
  if (w.size(0) != C)
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(C) +
                     " vs kernel " + std::to_string(w.size(0)));
  if (!(b.rank() == 1 && b.size(0) == O))
    throw ShapeError("conv_transpose2d: bias shape " + shape_str(b.shape()));
  const int64_t Ho = (H - 1) * stride - 2 * pad + k;
  const int64_t Wo = (W - 1) * stride - 2 * pad + k;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv_transpose2d: empty output for " +
                     shape_str(x.shape()));
  const int64_t OKK = O * k * k, HW = H * W;

  auto out = TensorT<T>::make_op(
      {B, O, Ho, Wo}, "conv_transpose2d", {x, w, b},
      [B, C, H, W, O, k, stride, pad, Ho, Wo, OKK, HW](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<T> cols(static_cast<size_t>(HW * OKK));
        for (int64_t bi = 0; bi < B; ++bi) {
          const T* g = self.grad.data() + bi * O * Ho * Wo;
          if (px.requires_grad || pw.requires_grad)
            detail::im2col_pm(g, O, Ho, Wo, k, stride, pad, H, W, cols.data());
          if (px.requires_grad)
            detail::gemm_bt(C, HW, OKK, pw.value.data(), cols.data(),
                            px.grad.data() + bi * C * HW, true);
          if (pw.requires_grad)
            detail::gemm(C, OKK, HW, px.value.data() + bi * C * HW,
                         cols.data(), pw.grad.data(), true);
          if (pb.requires_grad) {
            for (int64_t o = 0; o < O; ++o) {
              double acc = 0;
              const T* go = g + o * Ho * Wo;
              for (int64_t j = 0; j < Ho * Wo; ++j)
                acc += static_cast<double>(go[j]);
              pb.grad[o] += static_cast<T>(acc);
            }
          }
        }
      });

  std::vector<T> cols(static_cast<size_t>(HW * OKK));
  std::fill(out.value().begin(), out.value().end(), T(0));
  for (int64_t bi = 0; bi < B; ++bi) {
    detail::gemm_at(HW, OKK, C, x.data() + bi * C * HW, w.data(), cols.data(),
                    false);
    T* dst = out.value().data() + bi * O * Ho * Wo;
    detail::col2im_pm(cols.data(), O, Ho, Wo, k, stride, pad, H, W, dst);
    for (int64_t o = 0; o < O; ++o) {
      const T bv = b.value()[o];
      T* row = dst + o * Ho * Wo;
      for (int64_t j = 0; j < Ho * Wo; ++j) row[j] += bv;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batched linear algebra (used by the pinhole geometry chain)

/// Batched matrix product [B,M,K] x [B,K,N] -> [B,M,N].
template <class T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& x) {
  if (a.rank() != 3 || x.rank() != 3 || a.size(0) != x.size(0) ||
      a.size(2) != x.size(1))
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " +
                     shape_str(x.shape()));
  const int64_t B = a.size(0), M = a.size(1), K = a.size(2), N = x.size(2);
  auto out = TensorT<T>::make_op(
      {B, M, N}, "bmm", {a, x}, [B, M, K, N](TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& px = *self.parents[1];
        for (int64_t b = 0; b < B; ++b) {
          const T* g = self.grad.data() + b * M * N;
          if (pa.requires_grad)
            detail::gemm_bt(M, K, N, g, px.value.data() + b * K * N,
                            pa.grad.data() + b * M * K, true);
          if (px.requires_grad)
            detail::gemm_at(K, N, M, pa.value.data() + b * M * K, g,
                            px.grad.data() + b * K * N, true);
        }
      });
  for (int64_t b = 0; b < B; ++b)
    detail::gemm(M, N, K, a.data() + b * M * K, x.data() + b * K * N,
                 out.value().data() + b * M * N, false);
  return out;
}

/// Column-broadcast add: X[B,M,N] + v[B,M] (or subtract with sign = -1).
template <class T>
TensorT<T> add_cols(const TensorT<T>& x, const TensorT<T>& v, double sign = 1.0) {
  if (x.rank() != 3 || v.rank() != 2 || x.size(0) != v.size(0) ||
      x.size(1) != v.size(1))
    throw ShapeError("add_cols: " + shape_str(x.shape()) + " + " +
                     shape_str(v.shape()));
  const int64_t B = x.size(0), M = x.size(1), N = x.size(2);
  auto out = TensorT<T>::make_op(
      x.shape(), "add_cols", {x, v}, [B, M, N, sign](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        if (px.requires_grad)
          for (size_t j = 0; j < self.grad.size(); ++j)
            px.grad[j] += self.grad[j];
        if (pv.requires_grad) {
          for (int64_t b = 0; b < B; ++b)
            for (int64_t m = 0; m < M; ++m) {
              double acc = 0;
              const T* g = self.grad.data() + (b * M + m) * N;
              for (int64_t j = 0; j < N; ++j) acc += static_cast<double>(g[j]);
              pv.grad[b * M + m] += static_cast<T>(sign * acc);
            }
        }
      });
  for (int64_t b = 0; b < B; ++b)
    for (int64_t m = 0; m < M; ++m) {
      const T vv = static_cast<T>(sign) * v.value()[b * M + m];
      const T* src = x.data() + (b * M + m) * N;
      T* dst = out.value().data() + (b * M + m) * N;
      for (int64_t j = 0; j < N; ++j) dst[j] = src[j] + vv;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Primitive catalog: the differentiable vocabulary this substrate exposes.
// Verification iterates this list; every entry must have a registered
// finite-difference check (see verify.cpp), which is how the "all primitives
// pass grad_check" contract stays enforced when ops are added.

struct PrimitiveInfo {
  const char* name;
  const char* shape_rule;
};

inline const std::vector<PrimitiveInfo>& primitive_catalog() {
  static const std::vector<PrimitiveInfo> cat = {
      {"add", "same shapes -> same shape"},
      {"sub", "same shapes -> same shape"},
      {"mul", "same shapes -> same shape"},
      {"mul_scalar", "any shape -> same shape"},
      {"add_scalar", "any shape -> same shape"},
      {"exp", "any shape -> same shape"},
      {"log", "positive values -> same shape"},
      {"reciprocal", "nonzero values -> same shape"},
      {"sigmoid", "any shape -> same shape"},
      {"tanh", "any shape -> same shape"},
      {"leaky_relu", "any shape -> same shape"},
      {"clamp", "any shape -> same shape"},
      {"sum", "any shape -> scalar"},
      {"mean", "any shape -> scalar"},
      {"sum_per_batch", "[B,...] -> [B]"},
      {"reshape", "numel-preserving"},
      {"concat_channels", "[B,Ci,...] list -> [B,sum Ci,...]"},
      {"slice_channels", "[B,C,...] -> [B,to-from,...]"},
      {"upsample_nearest", "[B,C,H,W] -> [B,C,fH,fW]"},
      {"global_avg_pool", "[B,C,H,W] -> [B,C,1,1]"},
      {"channel_scale", "[B,C,H,W] x [B,C,1,1] -> [B,C,H,W]"},
      {"mul_bcast_channel", "[B,C,H,W] x [B,1,H,W] -> [B,C,H,W]"},
      {"conv2d", "[B,C,H,W] x [O,C,k,k] -> [B,O,H',W'], H'=(H+2p-k)/s+1"},
      {"conv_transpose2d", "[B,C,H,W] x [C,O,k,k] -> [B,O,(H-1)s-2p+k,...]"},
      {"bmm", "[B,M,K] x [B,K,N] -> [B,M,N]"},
      {"add_cols", "[B,M,N] + [B,M] -> [B,M,N]"},
  };
  return cat;
}

}  // namespace smvp::diff
