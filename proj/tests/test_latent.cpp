#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smvp/check_cases.hpp"
#include "smvp/gradcheck.hpp"
#include "smvp/latent.hpp"

using namespace smvp;
using D = diff::TensorT<double>;

namespace {

// Monte-Carlo KL estimate between two 1-d Gaussians, independent of the
// closed form under test. Returns (estimate, standard error).
std::pair<double, double> mc_kl(double mq, double sq, double mp, double sp,
                                int64_t n, Rng& rng) {
  double acc = 0, acc2 = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = mq + sq * rng.normal();
    const double lq = -0.5 * std::log(2 * M_PI) - std::log(sq) -
                      0.5 * (z - mq) * (z - mq) / (sq * sq);
    const double lp = -0.5 * std::log(2 * M_PI) - std::log(sp) -
                      0.5 * (z - mp) * (z - mp) / (sp * sp);
    const double d = lq - lp;
    acc += d;
    acc2 += d * d;
  }
  const double mean = acc / static_cast<double>(n);
  const double var = acc2 / static_cast<double>(n) - mean * mean;
  return {mean, std::sqrt(std::max(0.0, var) / static_cast<double>(n))};
}

latent::DiagonalGaussian<double> gauss1(double mean, double sigma) {
  return {D::scalar(mean, false).cast<double>(),
          D::scalar(std::log(sigma))};
}

}  // namespace

TEST_CASE("reparameterized sampling follows mean + std * noise") {
  // Nearly degenerate gaussian collapses onto the mean.
  Shape s{1, 2, 2, 2};
  auto mean = D::full(s, 0.3);
  auto log_std = D::full(s, -7.0);
  latent::DiagonalGaussian<double> d(mean, log_std);
  Rng rng(3);
  auto noise = D::randn(s, rng);
  auto z = latent::sample_reparam(d, noise);
  for (int64_t i = 0; i < z.value.numel(); ++i)
    CHECK(std::abs(z.value.value()[i] - 0.3) <
          1e-2 * std::abs(noise.value()[i]) + 1e-12);

  // Unit case: mean 0, log_std 0, noise 1.5 -> 1.5.
  latent::DiagonalGaussian<double> unit(D::scalar(0.0), D::scalar(0.0));
  auto z2 = latent::sample_reparam(unit, D::scalar(1.5));
  CHECK(z2.value.item() == doctest::Approx(1.5));
}

TEST_CASE("gradient of sum(sample) w.r.t. mean is all ones") {
  Shape s{1, 3};
  auto mean = D::zeros(s, true);
  auto log_std = D::zeros(s);
  latent::DiagonalGaussian<double> d(mean, log_std);
  Rng rng(4);
  auto z = latent::sample_reparam(d, D::randn(s, rng));
  diff::sum(z.value).backward();
  for (auto g : mean.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("closed-form KL matches hand-derived values") {
  auto kl = [](const latent::DiagonalGaussian<double>& q,
               const latent::DiagonalGaussian<double>& p) {
    return latent::kl_diag_gaussian(q, p).item();
  };
  CHECK(kl(gauss1(0, 1), gauss1(0, 1)) == 0.0);  // exact zero
  CHECK(kl(gauss1(2, 1), gauss1(0, 1)) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(kl(gauss1(0, 2), gauss1(0, 1)) ==
        doctest::Approx(1.5 - std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("closed-form KL agrees with the Monte-Carlo estimator") {
  Rng rng(1234);
  // The two spec cases with a million samples each.
  for (auto [mq, sq] : std::vector<std::pair<double, double>>{{2, 1}, {0, 2}}) {
    auto [est, se] = mc_kl(mq, sq, 0, 1, 1000000, rng);
    const double cf = latent::kl_diag_gaussian(gauss1(mq, sq), gauss1(0, 1)).item();
    CHECK(std::abs(est - cf) < 3 * se);
  }
  // Twenty random pairs at 1e5 samples.
  for (int trial = 0; trial < 20; ++trial) {
    const double mq = rng.uniform(-2, 2), sq = rng.uniform(0.3, 2.5);
    const double mp = rng.uniform(-2, 2), sp = rng.uniform(0.3, 2.5);
    auto [est, se] = mc_kl(mq, sq, mp, sp, 100000, rng);
    const double cf =
        latent::kl_diag_gaussian(gauss1(mq, sq), gauss1(mp, sp)).item();
    CHECK(std::abs(est - cf) < 3 * se + 1e-9);
  }
}

TEST_CASE("KL(q,q) = 0 exactly and KL >= 0 over random pairs") {
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    Shape s{2, 3, 2, 2};
    auto mq = D::randn(s, rng), lq = D::rand_uniform(s, rng, -2, 2);
    latent::DiagonalGaussian<double> q(mq, lq);
    CHECK(latent::kl_diag_gaussian(q, q).value()[0] == 0.0);
    CHECK(latent::kl_diag_gaussian(q, q).value()[1] == 0.0);
    auto mp = D::randn(s, rng), lp = D::rand_uniform(s, rng, -2, 2);
    latent::DiagonalGaussian<double> p(mp, lp);
    auto kl = latent::kl_diag_gaussian(q, p);
    for (auto v : kl.value()) CHECK(v >= -1e-9);
  }
}

TEST_CASE("log_std is clamped to +-7") {
  auto raw = D::from_vec({1, 2}, {-30.0, 30.0});
  latent::DiagonalGaussian<double> d(D::zeros({1, 2}), raw);
  CHECK(d.log_std.value()[0] == -7.0);
  CHECK(d.log_std.value()[1] == 7.0);
}

TEST_CASE("sigma-VAE likelihood at the spec's pinned points") {
  // MSE 0.04 -> sigma 0.2, per-element loss 0.5*log(2*pi*0.04) + 0.5.
  auto pred = D::from_vec({1, 4}, {0.2, 0.2, 0.2, 0.2});
  auto target = D::from_vec({1, 4}, {0.0, 0.4, 0.0, 0.4});
  auto res = latent::sigma_vae_nll(pred, target);
  CHECK(res.fitted_sigma == doctest::Approx(0.2).epsilon(1e-9));
  const double per_elem = 0.5 * std::log(2 * M_PI * 0.04) + 0.5;
  CHECK(per_elem == doctest::Approx(-0.19047).epsilon(1e-3));
  CHECK(res.loss.item() == doctest::Approx(4.0 * per_elem).epsilon(1e-9));

  // Identical tensors clamp the variance at the floor.
  auto same = latent::sigma_vae_nll(pred, pred);
  CHECK(same.fitted_sigma == doctest::Approx(std::sqrt(1e-6)));
  CHECK(same.loss.item() ==
        doctest::Approx(4.0 * (0.5 * std::log(2 * M_PI * 1e-6) + 0.5)));
}

TEST_CASE("doubling the residuals doubles sigma and adds log 2 per element") {
  Rng rng(66);
  Shape s{1, 8};
  auto target = D::zeros(s);
  auto r = D::rand_uniform(s, rng, 0.05, 0.4);
  auto res1 = latent::sigma_vae_nll(r, target);
  auto res2 = latent::sigma_vae_nll(diff::mul_scalar(r, 2.0), target);
  CHECK(res2.fitted_sigma == doctest::Approx(2.0 * res1.fitted_sigma));
  CHECK(res2.loss.item() / 8.0 - res1.loss.item() / 8.0 ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("sigma-VAE fitted variance equals the MSE") {
  Rng rng(67);
  for (int trial = 0; trial < 10; ++trial) {
    Shape s{2, 5};
    auto a = D::rand_uniform(s, rng, 0, 1), b = D::rand_uniform(s, rng, 0, 1);
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
      const double d = a.value()[i] - b.value()[i];
      mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    auto res = latent::sigma_vae_nll(a, b);
    CHECK(std::abs(res.fitted_sigma * res.fitted_sigma - mse) < 1e-6);
  }
}

TEST_CASE("empty tensors are rejected") {
  auto e = D::zeros({1, 0});
  CHECK_THROWS_AS(latent::sigma_vae_nll(e, e), ShapeError);
}

TEST_CASE("reparameterized draws match the target moments over 1e5 samples") {
  Rng rng(77);
  const double mean = 0.7, sigma = 1.3;
  latent::DiagonalGaussian<double> d(D::scalar(mean),
                                     D::scalar(std::log(sigma)));
  double acc = 0, acc2 = 0;
  const int64_t n = 100000;
  for (int64_t i = 0; i < n; ++i) {
    auto z = latent::sample_reparam(d, D::scalar(rng.normal()));
    const double v = z.value.item();
    acc += v;
    acc2 += v * v;
  }
  const double emp_mean = acc / n;
  const double emp_std = std::sqrt(acc2 / n - emp_mean * emp_mean);
  CHECK(std::abs(emp_mean - mean) < 0.01 * std::max(1.0, std::abs(mean)) + 0.013);
  CHECK(std::abs(emp_std - sigma) / sigma < 0.01);
}

TEST_CASE("latent ops pass grad_check") {
  for (auto& [name, factory] : checks::latent_cases()) {
    double worst = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(mix_seed(0x1a7e27ull, hash_str(name), seed));
      auto c = factory(rng);
      auto res = diff::grad_check(c.f, c.inputs);
      worst = std::max(worst, res.max_rel_err);
    }
    INFO("latent op ", name);
    CHECK(worst < 1e-4);
  }
}
