#pragma once

#include "smvp/networks.hpp"

namespace smvp::model {

using diff::ParameterSet;
using diff::TensorT;

enum class Variant { kDepthOnly, kCombined, kConditional };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kDepthOnly: return "depth_only";
    case Variant::kCombined: return "combined";
    case Variant::kConditional: return "conditional";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "depth_only") return Variant::kDepthOnly;
  if (s == "combined") return Variant::kCombined;
  if (s == "conditional") return Variant::kConditional;
  throw ConfigError("unknown variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::kConditional;
  int64_t n_cond = 4;
  int64_t n_pred_train = 4;
  int64_t n_pred_eval = 8;
  int64_t height = 32;
  int64_t width = 64;
  double learning_rate = 1e-4;
  int64_t batch_size = 4;
  /// Reconstruction terms on the static and dynamic branches in addition to
  /// the final prediction.
  bool per_branch_recon = true;
  nets::NetDims dims;

  void validate() const {
    if (n_cond < 2) throw ConfigError("n_cond must be >= 2");
    if (n_pred_train < 1 || n_pred_eval < 1)
      throw ConfigError("prediction horizons must be >= 1");
    const int64_t down = dims.downscale();
    if (height % down || width % down)
      throw ConfigError("resolution " + std::to_string(height) + "x" +
                        std::to_string(width) + " not divisible by " +
                        std::to_string(down));
    if (dims.pose_rot_scale >= 3.141592653589793)
      throw ConfigError("pose_rot_scale must stay below pi");
  }

  int64_t bottleneck_h() const { return height / dims.downscale(); }
  int64_t bottleneck_w() const { return width / dims.downscale(); }
};

/// Per-window loss decomposition. total = recon terms + KL terms.
struct ElboBreakdown {
  double recon_final = 0, recon_static = 0, recon_dynamic = 0;
  double kl_static = 0, kl_dynamic = 0;
  double total = 0;
  double sigma_final = 0, sigma_static = 0, sigma_dynamic = 0;

  std::string summary() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "total=%.4f recon=%.4f recon_s=%.4f recon_d=%.4f "
                  "kl_s=%.6f kl_d=%.6f",
                  total, recon_final, recon_static, recon_dynamic, kl_static,
                  kl_dynamic);
    return buf;
  }
};

template <class T>
struct ElboResult {
  ElboBreakdown breakdown;
  TensorT<T> loss;  // differentiable total
};

/// Everything produced for one predicted (or reconstructed) time step.
template <class T>
struct StepOutput {
  TensorT<T> final_frame;    // [B,3,H,W]
  TensorT<T> static_frame;   // [B,3,H,W]
  TensorT<T> dynamic_frame;  // undefined for depth-only
  TensorT<T> mask;           // undefined for depth-only
  TensorT<T> depth;          // [B,1,H,W]
  TensorT<T> residual_flow;  // undefined for depth-only
  TensorT<T> ego_flow;       // [B,2,H,W]
  geom::Pose pose;           // batch element 0
};

template <class T>
struct RolloutResult {
  std::vector<StepOutput<T>> context_recon;  // posterior steps 1..n_cond-1
  std::vector<StepOutput<T>> predicted;      // prior-driven future steps
};

struct RolloutOptions {
  /// Test hooks for the variant-algebra identity.
  bool force_zero_flow = false;
  bool force_mask_one = false;
};

/// Mask combination: x = m * x_static + (1 - m) * x_dynamic, with the mask
/// bound to the static branch. Convex per pixel by construction.
template <class T>
TensorT<T> combine_with_mask(const TensorT<T>& x_static,
                             const TensorT<T>& x_dynamic,
                             const TensorT<T>& mask) {
  return diff::add(x_dynamic, diff::mul_bcast_channel(
                                  diff::sub(x_static, x_dynamic), mask));
}

namespace detail {

/// sigma-VAE negative log likelihood from a pooled sum of squared residuals.
template <class T>
TensorT<T> sigma_nll_from_ssd(const TensorT<T>& ssd, int64_t count) {
  auto mse = diff::mul_scalar(ssd, 1.0 / static_cast<double>(count));
  auto var = diff::clamp(mse, latent::kSigmaVaeFloor,
                         std::numeric_limits<double>::infinity());
  return diff::mul_scalar(
      diff::add_scalar(diff::log_t(diff::mul_scalar(var, 2.0 * M_PI)), 1.0),
      0.5 * static_cast<double>(count));
}

template <class T>
TensorT<T> ssd(const TensorT<T>& pred, const TensorT<T>& target) {
  auto d = diff::sub(pred, target);
  return diff::sum(diff::mul(d, d));
}

}  // namespace detail

/// The decomposed stochastic predictor. Static branch: depth and ego-motion
/// decoded from a recurrent latent-conditioned state, applied by inverse
/// warping. Dynamic branch: residual flow warping the static prediction.
/// A sigmoid mask blends the two (mask weights the static branch).
template <class T>
class Model {
 public:
  Model(ModelConfig cfg, uint64_t param_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& d = cfg_.dims;
    const uint64_t s = param_seed;
    encoder_ = nets::ImageEncoder<T>(params_, "enc", d, s);
    head_depth_ = nets::FeatureHead<T>(params_, "head_depth",
                                       d.bottleneck_channels, d, s);
    head_pose_ = nets::FeatureHead<T>(params_, "head_pose",
                                      2 * d.bottleneck_channels, d, s);
    lstm_post_s_ = nets::ConvLSTMCell<T>(params_, "lstm_post_s",
                                         2 * d.head_channels,
                                         d.hidden_channels, s);
    lstm_prior_s_ = nets::ConvLSTMCell<T>(params_, "lstm_prior_s",
                                          2 * d.head_channels,
                                          d.hidden_channels, s);
    lstm_pred_s_ = nets::ConvLSTMCell<T>(
        params_, "lstm_pred_s", 2 * d.head_channels + d.latent_channels,
        d.hidden_channels, s);
    gauss_post_s_ = nets::GaussianHead<T>(params_, "post_s",
                                          d.hidden_channels,
                                          d.latent_channels, s);
    gauss_prior_s_ = nets::GaussianHead<T>(params_, "prior_s",
                                           d.hidden_channels,
                                           d.latent_channels, s);
    to_g_s_ = nets::Conv2dLayer<T>(params_, "pred_s.out", d.hidden_channels,
                                   d.predictor_channels, 3, 1, 1, s);
    dec_depth_ = nets::DepthDecoder<T>(params_, "dec_depth",
                                       d.predictor_channels, d, s);
    dec_pose_ = nets::PoseDecoder<T>(params_, "dec_pose",
                                     d.predictor_channels, d, s);
    if (cfg_.variant != Variant::kDepthOnly) {
      const int64_t motion_in = cfg_.variant == Variant::kConditional
                                    ? d.predictor_channels + d.bottleneck_channels
                                    : 2 * d.bottleneck_channels;
      head_motion_ = nets::FeatureHead<T>(params_, "head_motion", motion_in,
                                          d, s);
      lstm_post_d_ = nets::ConvLSTMCell<T>(params_, "lstm_post_d",
                                           d.head_channels,
                                           d.hidden_channels, s);
      lstm_prior_d_ = nets::ConvLSTMCell<T>(params_, "lstm_prior_d",
                                            d.head_channels,
                                            d.hidden_channels, s);
      lstm_pred_d_ = nets::ConvLSTMCell<T>(
          params_, "lstm_pred_d", d.head_channels + d.latent_channels,
          d.hidden_channels, s);
      gauss_post_d_ = nets::GaussianHead<T>(params_, "post_d",
                                            d.hidden_channels,
                                            d.latent_channels, s);
      gauss_prior_d_ = nets::GaussianHead<T>(params_, "prior_d",
                                             d.hidden_channels,
                                             d.latent_channels, s);
      to_g_d_ = nets::Conv2dLayer<T>(params_, "pred_d.out", d.hidden_channels,
                                     d.predictor_channels, 3, 1, 1, s);
      dec_flowmask_ = nets::FlowMaskDecoder<T>(params_, "dec_flowmask",
                                               d.predictor_channels, d, s);
    }
  }

  ParameterSet<T>& params() { return params_; }
  const ModelConfig& config() const { return cfg_; }

  /// Teacher-forced variational objective over a window of frames
  /// [0 .. L-1], each [B,3,H,W] in [0,1]. Posterior latents at every step.
  ElboResult<T> elbo(const std::vector<TensorT<T>>& frames,
                     const geom::Intrinsics& K, uint64_t noise_seed) const {
    if (frames.size() < 2)
      throw ShapeError("elbo: need at least two frames");
    const int64_t L = static_cast<int64_t>(frames.size());
    Recurrent rec = init_recurrent(frames[0]);

    auto ssd_final = TensorT<T>::zeros({1});
    auto ssd_static = TensorT<T>::zeros({1});
    auto ssd_dynamic = TensorT<T>::zeros({1});
    TensorT<T> kl_s_sum = TensorT<T>::zeros({1});
    TensorT<T> kl_d_sum = TensorT<T>::zeros({1});
    int64_t count = 0;

    for (int64_t t = 1; t < L; ++t) {
      StepIO io;
      io.target = frames[t];
      io.fed_prev = frames[t - 1];
      io.sample_posterior = true;
      io.noise_seed = mix_seed(noise_seed, static_cast<uint64_t>(t));
      auto out = step(rec, io, K, nullptr);

      ssd_final = diff::add(ssd_final, detail::ssd(out.final_frame, frames[t]));
      ssd_static =
          diff::add(ssd_static, detail::ssd(out.static_frame, frames[t]));
      if (cfg_.variant != Variant::kDepthOnly)
        ssd_dynamic =
            diff::add(ssd_dynamic, detail::ssd(out.dynamic_frame, frames[t]));
      count += frames[t].numel();

      kl_s_sum = diff::add(kl_s_sum, diff::mean(out.kl_static));
      if (cfg_.variant != Variant::kDepthOnly)
        kl_d_sum = diff::add(kl_d_sum, diff::mean(out.kl_dynamic));
    }

    ElboResult<T> res;
    auto nll_final = detail::sigma_nll_from_ssd(ssd_final, count);
    res.breakdown.recon_final = static_cast<double>(nll_final.item());
    res.breakdown.sigma_final = std::sqrt(std::max(
        latent::kSigmaVaeFloor,
        static_cast<double>(ssd_final.item()) / static_cast<double>(count)));
    auto loss = nll_final;
    if (cfg_.per_branch_recon) {
      auto nll_s = detail::sigma_nll_from_ssd(ssd_static, count);
      res.breakdown.recon_static = static_cast<double>(nll_s.item());
      res.breakdown.sigma_static = std::sqrt(std::max(
          latent::kSigmaVaeFloor,
          static_cast<double>(ssd_static.item()) / static_cast<double>(count)));
      loss = diff::add(loss, nll_s);
      if (cfg_.variant != Variant::kDepthOnly) {
        auto nll_d = detail::sigma_nll_from_ssd(ssd_dynamic, count);
        res.breakdown.recon_dynamic = static_cast<double>(nll_d.item());
        res.breakdown.sigma_dynamic = std::sqrt(
            std::max(latent::kSigmaVaeFloor,
                     static_cast<double>(ssd_dynamic.item()) /
                         static_cast<double>(count)));
        loss = diff::add(loss, nll_d);
      }
    }
    res.breakdown.kl_static = static_cast<double>(kl_s_sum.item());
    res.breakdown.kl_dynamic = static_cast<double>(kl_d_sum.item());
    // Closed-form KL is non-negative; float32 summation noise over the
    // window stays orders of magnitude below this bound.
    if (res.breakdown.kl_static < -1e-4 || res.breakdown.kl_dynamic < -1e-4)
      throw NumericError("negative KL: " + res.breakdown.summary());
    loss = diff::add(loss, kl_s_sum);
    if (cfg_.variant != Variant::kDepthOnly) loss = diff::add(loss, kl_d_sum);
    res.breakdown.total = static_cast<double>(loss.item());
    res.loss = std::move(loss);
    return res;
  }

  /// One optimizer update on a teacher-forced window. Deterministic given
  /// the seed. Aborts (without updating) on a non-finite loss.
  ElboBreakdown train_step(const std::vector<TensorT<T>>& frames,
                           const geom::Intrinsics& K,
                           diff::AdamState<T>& opt, uint64_t noise_seed) {
    if (static_cast<int64_t>(frames.size()) < cfg_.n_cond + cfg_.n_pred_train)
      throw ShapeError("train_step: window of " +
                       std::to_string(frames.size()) +
                       " frames is shorter than n_cond + n_pred_train = " +
                       std::to_string(cfg_.n_cond + cfg_.n_pred_train));
    auto res = elbo(frames, K, noise_seed);
    if (res.loss.has_nonfinite() || !std::isfinite(res.breakdown.total))
      throw NumericError("train_step: non-finite loss; " +
                         res.breakdown.summary());
    params_.zero_grad();
    res.loss.backward();
    opt.step(params_);
    return res.breakdown;
  }

  /// Stochastic futures. Latents come from posteriors while inside the
  /// context (reconstruction) and from the learned priors afterwards, with
  /// encoders consuming the model's own predictions autoregressively.
  /// Samples are batched; per-sample noise streams depend only on
  /// (seed, sample, t), so sample k is identical however the batch is laid
  /// out.
  std::vector<RolloutResult<T>> rollout(
      const std::vector<TensorT<T>>& context, int64_t n_steps,
      int64_t n_samples, const geom::Intrinsics& K, uint64_t seed,
      const RolloutOptions& opts = {}) const {
    if (static_cast<int64_t>(context.size()) != cfg_.n_cond)
      throw ShapeError("rollout: context length " +
                       std::to_string(context.size()) + " != n_cond " +
                       std::to_string(cfg_.n_cond));
    if (n_steps < 1) throw ConfigError("rollout: n_steps must be >= 1");
    if (n_samples < 1) throw ConfigError("rollout: n_samples must be >= 1");
    diff::NoGradGuard no_grad;

    std::vector<TensorT<T>> ctx;
    ctx.reserve(context.size());
    for (const auto& f : context) ctx.push_back(tile_batch(f, n_samples));

    Recurrent rec = init_recurrent(ctx[0]);
    std::vector<std::vector<StepOutput<T>>> per_sample_ctx(
        static_cast<size_t>(n_samples));
    std::vector<std::vector<StepOutput<T>>> per_sample_pred(
        static_cast<size_t>(n_samples));

    for (int64_t t = 1; t < cfg_.n_cond; ++t) {
      StepIO io;
      io.target = ctx[t];
      io.fed_prev = ctx[t - 1];
      io.sample_posterior = true;
      io.noise_seed = mix_seed(seed, static_cast<uint64_t>(t));
      io.per_sample_noise = true;
      io.opts = opts;
      auto out = step(rec, io, K, nullptr);
      for (int64_t b = 0; b < n_samples; ++b)
        per_sample_ctx[static_cast<size_t>(b)].push_back(
            take_batch(out, b));
    }

    auto fed = ctx.back();
    for (int64_t t = cfg_.n_cond; t < cfg_.n_cond + n_steps; ++t) {
      StepIO io;
      io.fed_prev = fed;
      io.sample_posterior = false;
      io.noise_seed = mix_seed(seed, static_cast<uint64_t>(t));
      io.per_sample_noise = true;
      io.opts = opts;
      auto out = step(rec, io, K, &fed);
      for (int64_t b = 0; b < n_samples; ++b)
        per_sample_pred[static_cast<size_t>(b)].push_back(take_batch(out, b));
    }

    std::vector<RolloutResult<T>> results(static_cast<size_t>(n_samples));
    for (int64_t b = 0; b < n_samples; ++b) {
      results[static_cast<size_t>(b)].context_recon =
          std::move(per_sample_ctx[static_cast<size_t>(b)]);
      results[static_cast<size_t>(b)].predicted =
          std::move(per_sample_pred[static_cast<size_t>(b)]);
    }
    return results;
  }

 private:
  struct Recurrent {
    nets::ConvLSTMState<T> post_s, prior_s, pred_s, post_d, prior_d, pred_d;
    TensorT<T> h_d_prev, h_p_prev, h_f_prev;
    TensorT<T> e_prev;
    nets::SkipStack<T> skips_prev;
    TensorT<T> prev_frame;
  };

  struct StepIO {
    TensorT<T> target;   // defined when a ground-truth target exists
    TensorT<T> fed_prev; // frame fed to the warp and encoders at t-1
    bool sample_posterior = true;
    bool per_sample_noise = false;
    uint64_t noise_seed = 0;
    RolloutOptions opts;
  };

  struct StepResult : StepOutput<T> {
    TensorT<T> kl_static;   // [B]
    TensorT<T> kl_dynamic;  // [B], defined for dynamic variants
  };

  Recurrent init_recurrent(const TensorT<T>& first_frame) const {
    Recurrent rec;
    const int64_t B = first_frame.size(0);
    const int64_t h = cfg_.bottleneck_h(), w = cfg_.bottleneck_w();
    const int64_t ch = cfg_.dims.hidden_channels;
    rec.post_s = nets::ConvLSTMState<T>::zeros(B, ch, h, w);
    rec.prior_s = nets::ConvLSTMState<T>::zeros(B, ch, h, w);
    rec.pred_s = nets::ConvLSTMState<T>::zeros(B, ch, h, w);
    auto enc = encoder_(first_frame);
    rec.e_prev = enc.bottleneck;
    rec.skips_prev = enc.skips;
    rec.prev_frame = first_frame;
    rec.h_d_prev = head_depth_(enc.bottleneck);
    // Zero-motion bootstrap: pose features of the first frame against itself.
    rec.h_p_prev =
        head_pose_(diff::concat_channels<T>({enc.bottleneck, enc.bottleneck}));
    if (cfg_.variant != Variant::kDepthOnly) {
      rec.post_d = nets::ConvLSTMState<T>::zeros(B, ch, h, w);
      rec.prior_d = nets::ConvLSTMState<T>::zeros(B, ch, h, w);
      rec.pred_d = nets::ConvLSTMState<T>::zeros(B, ch, h, w);
      rec.h_f_prev =
          TensorT<T>::zeros({B, cfg_.dims.head_channels, h, w});
    }
    return rec;
  }

  /// Per-sample noise streams depend only on (seed, batch row), so a sample's
  /// draws do not change with the batch layout.
  TensorT<T> make_noise(const Shape& shape, uint64_t seed,
                        bool per_sample) const {
    TensorT<T> n(shape);
    if (per_sample) {
      const int64_t B = shape[0];
      const int64_t inner = shape_numel(shape) / B;
      for (int64_t b = 0; b < B; ++b) {
        Rng rng(mix_seed(seed, 0x5a17, static_cast<uint64_t>(b)));
        T* dst = n.data() + b * inner;
        for (int64_t i = 0; i < inner; ++i)
          dst[i] = static_cast<T>(rng.normal());
      }
    } else {
      Rng rng(mix_seed(seed, 0x5a17));
      for (auto& v : n.value()) v = static_cast<T>(rng.normal());
    }
    return n;
  }

  /// One model step. When `advance_fed` is non-null (autoregressive mode)
  /// it receives the final prediction to feed the next step.
  StepResult step(Recurrent& rec, const StepIO& io, const geom::Intrinsics& K,
                  TensorT<T>* advance_fed) const {
    const auto& d = cfg_.dims;
    const bool dynamic = cfg_.variant != Variant::kDepthOnly;
    if (io.sample_posterior && !io.target.defined())
      throw ShapeError("model step: posterior sampling needs a target frame");
    const int64_t B = io.fed_prev.size(0);
    const Shape zshape{B, d.latent_channels, cfg_.bottleneck_h(),
                       cfg_.bottleneck_w()};

    // Static distributions.
    nets::EncodeResult<T> enc_t;
    TensorT<T> h_d_t, h_p_t;
    latent::DiagonalGaussian<T> q_s, p_s;
    if (io.target.defined()) {
      enc_t = encoder_(io.target);
      h_d_t = head_depth_(enc_t.bottleneck);
      h_p_t = head_pose_(
          diff::concat_channels<T>({rec.e_prev, enc_t.bottleneck}));
      rec.post_s = lstm_post_s_.step(
          rec.post_s, diff::concat_channels<T>({h_d_t, h_p_t}));
      q_s = gauss_post_s_(rec.post_s.hidden);
    }
    rec.prior_s = lstm_prior_s_.step(
        rec.prior_s, diff::concat_channels<T>({rec.h_d_prev, rec.h_p_prev}));
    p_s = gauss_prior_s_(rec.prior_s.hidden);

    auto noise_s = make_noise(zshape, mix_seed(io.noise_seed, 100),
                              io.per_sample_noise);
    auto z_s = io.sample_posterior
                   ? latent::sample_reparam(q_s, noise_s,
                                            latent::LatentSource::kPosterior)
                   : latent::sample_reparam(p_s, noise_s,
                                            latent::LatentSource::kPrior);

    // Static prediction.
    rec.pred_s = lstm_pred_s_.step(
        rec.pred_s,
        diff::concat_channels<T>({rec.h_d_prev, rec.h_p_prev, z_s.value}));
    auto g_s = to_g_s_(rec.pred_s.hidden);
    auto depth = dec_depth_(g_s, rec.skips_prev);
    auto pose = dec_pose_(g_s);
    auto grid = geom::sampling_grid_from_depth_pose(depth, pose, K);
    auto x_static = geom::bilinear_sample(io.fed_prev, grid);

    StepResult out;
    out.depth = depth;
    out.pose = geom::pose_from_tensor(pose, 0);
    out.static_frame = x_static;
    out.ego_flow = diff::sub(
        grid, geom::identity_grid<T>(B, cfg_.height, cfg_.width));
    if (io.target.defined())
      out.kl_static = latent::kl_diag_gaussian(q_s, p_s);
    else
      out.kl_static = TensorT<T>::zeros({B});

    TensorT<T> x_final = x_static;
    TensorT<T> e_t = io.target.defined() ? enc_t.bottleneck : TensorT<T>();

    if (dynamic) {
      latent::DiagonalGaussian<T> q_d, p_d;
      TensorT<T> h_f_t;
      rec.prior_d = lstm_prior_d_.step(rec.prior_d, rec.h_f_prev);
      p_d = gauss_prior_d_(rec.prior_d.hidden);
      if (io.target.defined()) {
        h_f_t = motion_features(g_s, rec.e_prev, e_t);
        rec.post_d = lstm_post_d_.step(rec.post_d, h_f_t);
        q_d = gauss_post_d_(rec.post_d.hidden);
      }
      auto noise_d = make_noise(zshape, mix_seed(io.noise_seed, 200),
                                io.per_sample_noise);
      auto z_d = io.sample_posterior
                     ? latent::sample_reparam(q_d, noise_d,
                                              latent::LatentSource::kPosterior)
                     : latent::sample_reparam(p_d, noise_d,
                                              latent::LatentSource::kPrior);
      rec.pred_d = lstm_pred_d_.step(
          rec.pred_d, diff::concat_channels<T>({rec.h_f_prev, z_d.value}));
      auto g_d = to_g_d_(rec.pred_d.hidden);
      auto fm = dec_flowmask_(g_d, rec.skips_prev);
      if (io.opts.force_zero_flow)
        fm.flow = TensorT<T>::zeros(fm.flow.shape());
      if (io.opts.force_mask_one)
        fm.mask = TensorT<T>::full(fm.mask.shape(), T(1));
      auto x_dynamic = geom::flow_warp(x_static, fm.flow);
      x_final = combine_with_mask(x_static, x_dynamic, fm.mask);
      out.dynamic_frame = x_dynamic;
      out.mask = fm.mask;
      out.residual_flow = fm.flow;
      out.kl_dynamic = io.target.defined()
                           ? latent::kl_diag_gaussian(q_d, p_d)
                           : TensorT<T>::zeros({B});
      out.final_frame = x_final;

      // Advance motion features for the next step's prior and predictor.
      if (!io.target.defined()) {
        auto enc_pred = encoder_(x_final);
        e_t = enc_pred.bottleneck;
        h_f_t = motion_features(g_s, rec.e_prev, e_t);
        advance(rec, enc_pred, x_final, h_f_t, {}, {});
        if (advance_fed) *advance_fed = x_final;
        return out;
      }
      advance(rec, enc_t, io.target, h_f_t, h_d_t, h_p_t);
      return out;
    }

    out.final_frame = x_final;
    out.kl_dynamic = TensorT<T>();
    if (!io.target.defined()) {
      auto enc_pred = encoder_(x_final);
      advance(rec, enc_pred, x_final, {}, {}, {});
      if (advance_fed) *advance_fed = x_final;
      return out;
    }
    advance(rec, enc_t, io.target, {}, h_d_t, h_p_t);
    return out;
  }

  TensorT<T> motion_features(const TensorT<T>& g_s, const TensorT<T>& e_prev,
                             const TensorT<T>& e_t) const {
    // Conditional: condition the dynamic branch on the static predictor
    // output; Combined: frame features only.
    if (cfg_.variant == Variant::kConditional)
      return head_motion_(diff::concat_channels<T>({g_s, e_t}));
    return head_motion_(diff::concat_channels<T>({e_prev, e_t}));
  }

  void advance(Recurrent& rec, const nets::EncodeResult<T>& enc_fed,
               const TensorT<T>& fed_frame, const TensorT<T>& h_f_t,
               const TensorT<T>& h_d_t, const TensorT<T>& h_p_t) const {
    rec.h_p_prev = h_p_t.defined()
                       ? h_p_t
                       : head_pose_(diff::concat_channels<T>(
                             {rec.e_prev, enc_fed.bottleneck}));
    rec.h_d_prev = h_d_t.defined() ? h_d_t : head_depth_(enc_fed.bottleneck);
    rec.e_prev = enc_fed.bottleneck;
    rec.skips_prev = enc_fed.skips;
    rec.prev_frame = fed_frame;
    if (h_f_t.defined()) rec.h_f_prev = h_f_t;
  }

  static TensorT<T> tile_batch(const TensorT<T>& x, int64_t n) {
    if (x.size(0) != 1)
      throw ShapeError("rollout context frames must have batch size 1");
    Shape s = x.shape();
    s[0] = n;
    TensorT<T> out(s);
    for (int64_t b = 0; b < n; ++b)
      std::copy(x.value().begin(), x.value().end(),
                out.value().begin() + b * x.numel());
    return out;
  }

  static TensorT<T> slice_batch(const TensorT<T>& x, int64_t b) {
    if (!x.defined()) return {};
    Shape s = x.shape();
    const int64_t inner = x.numel() / s[0];
    s[0] = 1;
    TensorT<T> out(s);
    std::copy(x.value().begin() + b * inner,
              x.value().begin() + (b + 1) * inner, out.value().begin());
    return out;
  }

  StepOutput<T> take_batch(const StepResult& r, int64_t b) const {
    StepOutput<T> o;
    o.final_frame = slice_batch(r.final_frame, b);
    o.static_frame = slice_batch(r.static_frame, b);
    o.dynamic_frame = slice_batch(r.dynamic_frame, b);
    o.mask = slice_batch(r.mask, b);
    o.depth = slice_batch(r.depth, b);
    o.residual_flow = slice_batch(r.residual_flow, b);
    o.ego_flow = slice_batch(r.ego_flow, b);
    o.pose = r.pose;
    return o;
  }

  ModelConfig cfg_;
  ParameterSet<T> params_;
  nets::ImageEncoder<T> encoder_;
  nets::FeatureHead<T> head_depth_, head_pose_, head_motion_;
  nets::ConvLSTMCell<T> lstm_post_s_, lstm_prior_s_, lstm_pred_s_;
  nets::ConvLSTMCell<T> lstm_post_d_, lstm_prior_d_, lstm_pred_d_;
  nets::GaussianHead<T> gauss_post_s_, gauss_prior_s_;
  nets::GaussianHead<T> gauss_post_d_, gauss_prior_d_;
  nets::Conv2dLayer<T> to_g_s_, to_g_d_;
  nets::DepthDecoder<T> dec_depth_;
  nets::PoseDecoder<T> dec_pose_;
  nets::FlowMaskDecoder<T> dec_flowmask_;
};

}  // namespace smvp::model
