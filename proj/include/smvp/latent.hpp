#pragma once

#include "smvp/ops.hpp"

namespace smvp::latent {

using diff::TensorT;

inline constexpr double kLogStdClamp = 7.0;
inline constexpr double kSigmaVaeFloor = 1e-6;

/// Factorized Gaussian parameterized by mean and log standard deviation.
/// log_std is clamped to [-kLogStdClamp, kLogStdClamp] on construction.
template <class T>
struct DiagonalGaussian {
  TensorT<T> mean;
  TensorT<T> log_std;

  DiagonalGaussian() = default;
  DiagonalGaussian(TensorT<T> mu, TensorT<T> raw_log_std)
      : mean(std::move(mu)),
        log_std(diff::clamp(raw_log_std, -kLogStdClamp, kLogStdClamp)) {
    if (!same_shape(mean.shape(), log_std.shape()))
      throw ShapeError("DiagonalGaussian: mean " + shape_str(mean.shape()) +
                       " vs log_std " + shape_str(log_std.shape()));
  }

  const Shape& shape() const { return mean.shape(); }
};

enum class LatentSource { kPosterior, kPrior };

template <class T>
struct LatentSample {
  TensorT<T> value;
  LatentSource source = LatentSource::kPosterior;
};

/// Reparameterized draw: value = mean + exp(log_std) * noise.
template <class T>
LatentSample<T> sample_reparam(const DiagonalGaussian<T>& dist,
                               const TensorT<T>& noise,
                               LatentSource source = LatentSource::kPosterior) {
  if (!same_shape(noise.shape(), dist.mean.shape()))
    throw ShapeError("sample_reparam: noise " + shape_str(noise.shape()) +
                     " vs dist " + shape_str(dist.mean.shape()));
  auto value = diff::add(dist.mean, diff::mul(diff::exp_t(dist.log_std), noise));
  return {std::move(value), source};
}

/// Analytic KL(q || p) per batch element, summed over latent dimensions.
/// Written in terms of log-std differences so KL(q, q) is exactly zero.
template <class T>
TensorT<T> kl_diag_gaussian(const DiagonalGaussian<T>& q,
                            const DiagonalGaussian<T>& p) {
  if (!same_shape(q.shape(), p.shape()))
    throw ShapeError("kl_diag_gaussian: q " + shape_str(q.shape()) + " vs p " +
                     shape_str(p.shape()));
  // log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
  auto dls = diff::sub(p.log_std, q.log_std);
  auto var_ratio = diff::exp_t(diff::mul_scalar(dls, -2.0));  // (sq/sp)^2
  auto dmu = diff::sub(q.mean, p.mean);
  auto maha = diff::mul(diff::mul(dmu, dmu),
                        diff::exp_t(diff::mul_scalar(p.log_std, -2.0)));
  auto per_elem = diff::add_scalar(
      diff::add(dls, diff::mul_scalar(diff::add(var_ratio, maha), 0.5)), -0.5);
  return diff::sum_per_batch(per_elem);
}

template <class T>
struct SigmaVaeResult {
  TensorT<T> loss;     // scalar: N * (0.5 log(2 pi sigma^2) + 0.5)
  double fitted_sigma; // sqrt of the clamped MSE
};

/// Gaussian negative log likelihood with the variance at its optimum
/// (the batch MSE, floored at kSigmaVaeFloor). The gradient reaches pred
/// through the MSE inside the log.
template <class T>
SigmaVaeResult<T> sigma_vae_nll(const TensorT<T>& pred,
                                const TensorT<T>& target) {
  if (!same_shape(pred.shape(), target.shape()))
    throw ShapeError("sigma_vae_nll: pred " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  if (pred.numel() == 0) throw ShapeError("sigma_vae_nll: empty tensors");
  const double n = static_cast<double>(pred.numel());
  auto diffs = diff::sub(pred, target);
  auto mse = diff::mean(diff::mul(diffs, diffs));
  auto var = diff::clamp(mse, kSigmaVaeFloor,
                         std::numeric_limits<double>::infinity());
  auto loss = diff::mul_scalar(
      diff::add_scalar(diff::log_t(diff::mul_scalar(var, 2.0 * M_PI)), 1.0),
      0.5 * n);
  return {std::move(loss), std::sqrt(static_cast<double>(var.item()))};
}

}  // namespace smvp::latent
