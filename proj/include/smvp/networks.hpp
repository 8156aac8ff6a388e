#pragma once

#include "smvp/geometry.hpp"
#include "smvp/latent.hpp"
#include "smvp/params.hpp"

namespace smvp::nets {

using diff::ParameterSet;
using diff::TensorT;

/// Architecture knobs. stage_channels lists the stride-2 pyramid stages; the
/// bottleneck sits below the last stage at stride-1.
struct NetDims {
  int64_t in_channels = 3;
  std::vector<int64_t> stage_channels = {16, 24, 32, 48};
  int64_t bottleneck_channels = 64;
  int64_t head_channels = 32;
  int64_t hidden_channels = 64;
  int64_t latent_channels = 8;
  int64_t predictor_channels = 64;
  int64_t se_reduction = 4;
  double leaky_slope = 0.2;
  double depth_min = 0.1;
  double depth_max = 100.0;
  double max_flow = 16.0;
  double pose_rot_scale = 0.01;
  double pose_trans_scale = 0.01;

  int64_t downscale() const { return int64_t(1) << stage_channels.size(); }
};

template <class T>
struct Conv2dLayer {
  TensorT<T> w, b;
  int64_t stride = 1, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
              int64_t cout, int64_t k, int64_t stride_, int64_t pad_,
              uint64_t seed)
      : stride(stride_), pad(pad_) {
    w = ps.has(prefix + ".weight") ? ps.at(prefix + ".weight")
                                   : ps.create_conv(prefix + ".weight",
                                                    {cout, cin, k, k}, seed);
    b = ps.has(prefix + ".bias") ? ps.at(prefix + ".bias")
                                 : ps.create(prefix + ".bias", {cout});
  }

  TensorT<T> operator()(const TensorT<T>& x) const {
    return diff::conv2d(x, w, b, stride, pad);
  }
};

/// Squeeze-and-excitation channel gate.
template <class T>
struct SELayer {
  Conv2dLayer<T> fc1, fc2;

  SELayer() = default;
  SELayer(ParameterSet<T>& ps, const std::string& prefix, int64_t channels,
          int64_t reduction, uint64_t seed) {
    const int64_t mid = std::max<int64_t>(1, channels / reduction);
    fc1 = Conv2dLayer<T>(ps, prefix + ".fc1", channels, mid, 1, 1, 0, seed);
    fc2 = Conv2dLayer<T>(ps, prefix + ".fc2", mid, channels, 1, 1, 0, seed);
  }

  TensorT<T> operator()(const TensorT<T>& x) const {
    auto gate = diff::sigmoid(fc2(diff::relu(fc1(diff::global_avg_pool(x)))));
    return diff::channel_scale(x, gate);
  }
};

template <class T>
struct ConvLSTMState {
  TensorT<T> hidden, cell;

  static ConvLSTMState zeros(int64_t B, int64_t C, int64_t H, int64_t W) {
    return {TensorT<T>::zeros({B, C, H, W}), TensorT<T>::zeros({B, C, H, W})};
  }
};

/// ConvLSTM cell with 3x3 gate convolutions over concat(input, hidden).
/// Gate order in the output channels: input, forget, output, candidate.
template <class T>
struct ConvLSTMCell {
  Conv2dLayer<T> gates;
  int64_t hidden_channels = 0;

  ConvLSTMCell() = default;
  ConvLSTMCell(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
               int64_t ch, uint64_t seed, double forget_bias = 1.0)
      : hidden_channels(ch) {
    const bool fresh = !ps.has(prefix + ".gates.bias");
    gates = Conv2dLayer<T>(ps, prefix + ".gates", cin + ch, 4 * ch, 3, 1, 1,
                           seed);
    if (fresh)
      for (int64_t i = ch; i < 2 * ch; ++i)
        gates.b.value()[i] = static_cast<T>(forget_bias);
  }

  ConvLSTMState<T> step(const ConvLSTMState<T>& state,
                        const TensorT<T>& input) const {
    auto z = gates(diff::concat_channels<T>({input, state.hidden}));
    const int64_t ch = hidden_channels;
    auto i = diff::sigmoid(diff::slice_channels(z, 0, ch));
    auto f = diff::sigmoid(diff::slice_channels(z, ch, 2 * ch));
    auto o = diff::sigmoid(diff::slice_channels(z, 2 * ch, 3 * ch));
    auto g = diff::tanh_t(diff::slice_channels(z, 3 * ch, 4 * ch));
    auto cell = diff::add(diff::mul(f, state.cell), diff::mul(i, g));
    auto hidden = diff::mul(o, diff::tanh_t(cell));
    return {std::move(hidden), std::move(cell)};
  }
};

/// Ordered encoder feature maps at strictly decreasing resolutions; the
/// decoders concatenate them back in.
template <class T>
using SkipStack = std::vector<TensorT<T>>;

template <class T>
struct EncodeResult {
  TensorT<T> bottleneck;
  SkipStack<T> skips;  // one per stage, highest resolution first
};

/// Strided convolutional pyramid: per stage a stride-2 conv then a stride-1
/// conv, followed by two stride-1 bottleneck convs.
template <class T>
struct ImageEncoder {
  std::vector<Conv2dLayer<T>> stage_a, stage_b;
  Conv2dLayer<T> bott_a, bott_b;
  NetDims dims;

  ImageEncoder() = default;
  ImageEncoder(ParameterSet<T>& ps, const std::string& prefix,
               const NetDims& d, uint64_t seed)
      : dims(d) {
    int64_t cin = d.in_channels;
    for (size_t i = 0; i < d.stage_channels.size(); ++i) {
      const int64_t cout = d.stage_channels[i];
      const std::string sp = prefix + ".stage" + std::to_string(i);
      stage_a.emplace_back(ps, sp + ".down", cin, cout, 3, 2, 1, seed);
      stage_b.emplace_back(ps, sp + ".conv", cout, cout, 3, 1, 1, seed);
      cin = cout;
    }
    bott_a = Conv2dLayer<T>(ps, prefix + ".bott0", cin, d.bottleneck_channels,
                            3, 1, 1, seed);
    bott_b = Conv2dLayer<T>(ps, prefix + ".bott1", d.bottleneck_channels,
                            d.bottleneck_channels, 3, 1, 1, seed);
  }

  EncodeResult<T> operator()(const TensorT<T>& frame) const {
    auto y = frame;
    SkipStack<T> skips;
    for (size_t i = 0; i < stage_a.size(); ++i) {
      y = diff::leaky_relu(stage_a[i](y), dims.leaky_slope);
      y = diff::leaky_relu(stage_b[i](y), dims.leaky_slope);
      skips.push_back(y);
    }
    y = diff::leaky_relu(bott_a(y), dims.leaky_slope);
    y = diff::leaky_relu(bott_b(y), dims.leaky_slope);
    return {std::move(y), std::move(skips)};
  }
};

/// Bottleneck-resolution feature head: two convs, a squeeze-excitation gate,
/// then a projection to the head width.
template <class T>
struct FeatureHead {
  Conv2dLayer<T> c0, c1, proj;
  SELayer<T> se;
  double slope = 0.2;

  FeatureHead() = default;
  FeatureHead(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
              const NetDims& d, uint64_t seed)
      : slope(d.leaky_slope) {
    c0 = Conv2dLayer<T>(ps, prefix + ".c0", cin, d.bottleneck_channels, 3, 1,
                        1, seed);
    c1 = Conv2dLayer<T>(ps, prefix + ".c1", d.bottleneck_channels,
                        d.bottleneck_channels, 3, 1, 1, seed);
    se = SELayer<T>(ps, prefix + ".se", d.bottleneck_channels, d.se_reduction,
                    seed);
    proj = Conv2dLayer<T>(ps, prefix + ".proj", d.bottleneck_channels,
                          d.head_channels, 3, 1, 1, seed);
  }

  TensorT<T> operator()(const TensorT<T>& x) const {
    auto y = diff::leaky_relu(c0(x), slope);
    y = diff::leaky_relu(c1(y), slope);
    y = se(y);
    return diff::leaky_relu(proj(y), slope);
  }
};

/// Gaussian parameter head on top of an LSTM hidden state.
template <class T>
struct GaussianHead {
  Conv2dLayer<T> conv;
  int64_t latent_channels = 0;

  GaussianHead() = default;
  GaussianHead(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
               int64_t cz, uint64_t seed)
      : latent_channels(cz) {
    conv = Conv2dLayer<T>(ps, prefix + ".dist", cin, 2 * cz, 3, 1, 1, seed);
  }

  latent::DiagonalGaussian<T> operator()(const TensorT<T>& h) const {
    auto y = conv(h);
    return {diff::slice_channels(y, 0, latent_channels),
            diff::slice_channels(y, latent_channels, 2 * latent_channels)};
  }
};

/// Upsampling decoder with per-resolution skip concatenation. The skip at
/// bottleneck resolution is consumed before the first upsample, mirroring the
/// duplicated-width rows of the encoder table.
template <class T>
struct PyramidDecoder {
  Conv2dLayer<T> conv_in;
  std::vector<Conv2dLayer<T>> level_convs;  // one per upsample with a skip
  Conv2dLayer<T> full_conv, head;
  double slope = 0.2;

  PyramidDecoder() = default;
  PyramidDecoder(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
                 int64_t out_channels, const NetDims& d, uint64_t seed)
      : slope(d.leaky_slope) {
    const auto& sc = d.stage_channels;
    const size_t n = sc.size();
    conv_in = Conv2dLayer<T>(ps, prefix + ".in", cin + sc[n - 1], sc[n - 1], 3,
                             1, 1, seed);
    for (size_t i = n - 1; i >= 1; --i) {
      level_convs.emplace_back(ps, prefix + ".lvl" + std::to_string(i - 1),
                               sc[i] + sc[i - 1], sc[i - 1], 3, 1, 1, seed);
    }
    full_conv = Conv2dLayer<T>(ps, prefix + ".full", sc[0], sc[0], 3, 1, 1,
                               seed);
    head = Conv2dLayer<T>(ps, prefix + ".head", sc[0], out_channels, 3, 1, 1,
                          seed);
  }

  /// Raw (pre-squash) full-resolution output.
  TensorT<T> operator()(const TensorT<T>& g, const SkipStack<T>& skips) const {
    const size_t n = skips.size();
    if (n != level_convs.size() + 1)
      throw ShapeError("decoder: skip stack depth " + std::to_string(n) +
                       " does not match decoder expectation " +
                       std::to_string(level_convs.size() + 1));
    auto y = diff::leaky_relu(
        conv_in(diff::concat_channels<T>({g, skips[n - 1]})), slope);
    for (size_t i = 0; i < level_convs.size(); ++i) {
      y = diff::upsample_nearest(y, 2);
      y = diff::leaky_relu(
          level_convs[i](diff::concat_channels<T>({y, skips[n - 2 - i]})),
          slope);
    }
    y = diff::upsample_nearest(y, 2);
    y = diff::leaky_relu(full_conv(y), slope);
    return head(y);
  }
};

/// Depth decoder: disparity squashing d = 1 / (a * sigmoid(y) + b) with
/// a, b chosen so outputs span [depth_min, depth_max].
template <class T>
struct DepthDecoder {
  PyramidDecoder<T> trunk;
  double a = 0, b = 0;

  DepthDecoder() = default;
  DepthDecoder(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
               const NetDims& d, uint64_t seed)
      : trunk(ps, prefix, cin, 1, d, seed),
        a(1.0 / d.depth_min - 1.0 / d.depth_max),
        b(1.0 / d.depth_max) {}

  TensorT<T> operator()(const TensorT<T>& g, const SkipStack<T>& skips) const {
    auto disp = diff::add_scalar(
        diff::mul_scalar(diff::sigmoid(trunk(g, skips)), a), b);
    return diff::reciprocal(disp);
  }
};

/// Pose decoder: global average pool then two 1x1 convs to 6 numbers.
/// Rotation is tanh-bounded by pose_rot_scale (< pi), translation scaled by
/// pose_trans_scale.
template <class T>
struct PoseDecoder {
  Conv2dLayer<T> fc1, fc2;
  double rot_scale = 0.01, trans_scale = 0.01, slope = 0.2;

  PoseDecoder() = default;
  PoseDecoder(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
              const NetDims& d, uint64_t seed)
      : rot_scale(d.pose_rot_scale),
        trans_scale(d.pose_trans_scale),
        slope(d.leaky_slope) {
    fc1 = Conv2dLayer<T>(ps, prefix + ".fc1", cin, cin, 1, 1, 0, seed);
    fc2 = Conv2dLayer<T>(ps, prefix + ".fc2", cin, 6, 1, 1, 0, seed);
  }

  TensorT<T> operator()(const TensorT<T>& g) const {
    auto y = fc2(diff::leaky_relu(fc1(diff::global_avg_pool(g)), slope));
    auto flat = diff::reshape(y, {y.size(0), 6});
    auto rot = diff::mul_scalar(diff::tanh_t(diff::slice_channels(flat, 0, 3)),
                                rot_scale);
    auto trans =
        diff::mul_scalar(diff::slice_channels(flat, 3, 6), trans_scale);
    return diff::concat_channels<T>({rot, trans});
  }
};

template <class T>
struct FlowMask {
  TensorT<T> flow;  // [B,2,H,W], bounded by max_flow
  TensorT<T> mask;  // [B,1,H,W] in [0,1]
};

/// Residual-flow and mask decoder: one trunk, tanh-bounded flow channels and
/// a sigmoid mask channel.
template <class T>
struct FlowMaskDecoder {
  PyramidDecoder<T> trunk;
  double max_flow = 16.0;

  FlowMaskDecoder() = default;
  FlowMaskDecoder(ParameterSet<T>& ps, const std::string& prefix, int64_t cin,
                  const NetDims& d, uint64_t seed)
      : trunk(ps, prefix, cin, 3, d, seed), max_flow(d.max_flow) {}

  FlowMask<T> operator()(const TensorT<T>& g, const SkipStack<T>& skips) const {
    auto raw = trunk(g, skips);
    auto flow = diff::mul_scalar(
        diff::tanh_t(diff::slice_channels(raw, 0, 2)), max_flow);
    auto mask = diff::sigmoid(diff::slice_channels(raw, 2, 3));
    return {std::move(flow), std::move(mask)};
  }
};

}  // namespace smvp::nets
