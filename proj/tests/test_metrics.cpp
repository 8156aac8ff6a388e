#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smvp/metrics.hpp"

using namespace smvp;
using metrics::Frame;

namespace {

Frame rand_frame(Rng& rng, Shape s = {1, 3, 12, 12}) {
  return Frame::rand_uniform(std::move(s), rng, 0.f, 1.f);
}

}  // namespace

TEST_CASE("psnr pinned values") {
  Rng rng(1);
  auto a = rand_frame(rng);
  CHECK(metrics::psnr(a, a) == 100.0);

  // MSE 0.01 -> 20 dB.
  auto zeros = Frame::zeros({1, 1, 4, 4});
  auto tenth = Frame::full({1, 1, 4, 4}, 0.1f);
  CHECK(metrics::psnr(zeros, tenth) == doctest::Approx(20.0).epsilon(1e-6));

  auto ones = Frame::full({1, 1, 4, 4}, 1.0f);
  CHECK(metrics::psnr(zeros, ones) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("psnr symmetry and shape checks") {
  Rng rng(2);
  auto a = rand_frame(rng), b = rand_frame(rng);
  CHECK(metrics::psnr(a, b) == metrics::psnr(b, a));
  CHECK(metrics::psnr(a, b) >= 0.0);
  auto c = Frame::zeros({1, 3, 8, 8});
  CHECK_THROWS_AS(metrics::psnr(a, c), ShapeError);
}

TEST_CASE("ssim pinned values and properties") {
  Rng rng(3);
  auto a = rand_frame(rng);
  CHECK(metrics::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  auto half1 = Frame::full({1, 1, 9, 9}, 0.5f);
  auto half2 = Frame::full({1, 1, 9, 9}, 0.5f);
  CHECK(metrics::ssim(half1, half2) == doctest::Approx(1.0).epsilon(1e-12));

  // a vs 1-a: strictly below 1, inside [-1, 1).
  Frame inv = a.detach();
  for (auto& v : inv.value()) v = 1.f - v;
  const double s = metrics::ssim(a, inv);
  CHECK(s < 1.0);
  CHECK(s >= -1.0);
  CHECK(metrics::ssim(a, inv) == metrics::ssim(inv, a));

  CHECK_THROWS_AS(metrics::ssim(a, a, 25), ShapeError);
  CHECK_THROWS_AS(metrics::ssim(a, a, 4), ShapeError);
}

TEST_CASE("depth metrics: identity, median-scaling invariance, fixed ratio") {
  Rng rng(4);
  auto gt = Frame::rand_uniform({1, 1, 8, 8}, rng, 1.f, 20.f);
  auto m0 = metrics::depth_metrics(gt, gt, nullptr);
  CHECK(m0.abs_rel == 0.0);
  CHECK(m0.sq_rel == 0.0);
  CHECK(m0.rmse == 0.0);
  CHECK(m0.rmse_log == 0.0);
  CHECK(m0.delta1 == 1.0);
  CHECK(m0.delta2 == 1.0);
  CHECK(m0.delta3 == 1.0);

  // pred = 2 gt: median scaling cancels the factor exactly.
  Frame doubled = gt.detach();
  for (auto& v : doubled.value()) v *= 2.f;
  auto m1 = metrics::depth_metrics(doubled, gt, nullptr, true);
  CHECK(m1.abs_rel < 1e-7);
  CHECK(m1.delta1 == 1.0);
  CHECK(m1.scale == doctest::Approx(0.5).epsilon(1e-6));

  // Scaling disabled: abs_rel = 1, every ratio is 2 > 1.25^3.
  auto m2 = metrics::depth_metrics(doubled, gt, nullptr, false);
  CHECK(m2.abs_rel == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(m2.delta1 == 0.0);
  CHECK(m2.delta3 == 0.0);

  // Invariance to any positive rescaling.
  Frame scaled = gt.detach();
  for (auto& v : scaled.value()) v *= 0.37f;
  auto m3 = metrics::depth_metrics(scaled, gt, nullptr, true);
  CHECK(m3.abs_rel < 1e-6);

  auto empty_mask = Frame::zeros({1, 1, 8, 8});
  CHECK_THROWS_AS(metrics::depth_metrics(gt, gt, &empty_mask), NumericError);
}

TEST_CASE("masked metrics: regions, complements, and degenerate masks") {
  Rng rng(5);
  auto gt = rand_frame(rng, {1, 3, 10, 10});

  // All-ones mask: fg equals the unmasked metrics, bg absent.
  auto ones = Frame::full({1, 1, 10, 10}, 1.f);
  auto pred = rand_frame(rng, {1, 3, 10, 10});
  auto mm = metrics::masked_metrics(pred, gt, ones);
  REQUIRE(mm.fg.has_value());
  CHECK_FALSE(mm.bg.has_value());
  CHECK(mm.fg->psnr == doctest::Approx(metrics::psnr(pred, gt)));
  CHECK(mm.fg->ssim == doctest::Approx(metrics::ssim(pred, gt)));

  // pred == gt: both regions at the cap.
  Frame mask = Frame::zeros({1, 1, 10, 10});
  for (int64_t i = 0; i < 30; ++i) mask.value()[i] = 1.f;
  auto eq = metrics::masked_metrics(gt, gt, mask);
  CHECK(eq.fg->psnr == 100.0);
  CHECK(eq.bg->psnr == 100.0);
  CHECK(eq.fg->pixels + eq.bg->pixels == 100);

  // Differences confined to the foreground leave the background at the cap.
  Frame tweaked = gt.detach();
  for (int64_t c = 0; c < 3; ++c) tweaked.value()[c * 100 + 4] = 0.123f;
  auto conf = metrics::masked_metrics(tweaked, gt, mask);
  CHECK(conf.bg->psnr == 100.0);
  CHECK(conf.fg->psnr < 100.0);

  Frame fuzzy = Frame::full({1, 1, 10, 10}, 0.3f);
  CHECK_THROWS_AS(metrics::masked_metrics(pred, gt, fuzzy), NumericError);
}

TEST_CASE("best-of-n selection and tie-breaks") {
  Rng rng(6);
  std::vector<Frame> gt = {rand_frame(rng), rand_frame(rng)};
  std::vector<std::vector<Frame>> samples;
  samples.push_back({rand_frame(rng), rand_frame(rng)});
  samples.push_back({gt[0].detach(), gt[1].detach()});  // the truth itself
  samples.push_back({rand_frame(rng), rand_frame(rng)});
  CHECK(metrics::best_of_n(samples, gt) == 1);

  // Duplicates: lowest index wins.
  std::vector<std::vector<Frame>> dup = {samples[0], samples[0]};
  CHECK(metrics::best_of_n(dup, gt) == 0);

  std::vector<std::vector<Frame>> one = {samples[0]};
  CHECK(metrics::best_of_n(one, gt) == 0);
  CHECK_THROWS_AS(metrics::best_of_n({}, gt), ShapeError);
}

TEST_CASE("diversity std: identical samples, two-point gap, and guards") {
  Rng rng(7);
  auto f = rand_frame(rng, {1, 3, 6, 6});
  std::vector<std::vector<Frame>> same = {{f.detach()}, {f.detach()}};
  auto maps = metrics::diversity_std(same);
  REQUIRE(maps.size() == 1);
  for (auto v : maps[0].value()) CHECK(v == 0.f);

  // Two samples differing by epsilon on one pixel (all channels):
  // population std = epsilon / 2 there.
  const float eps = 0.25f;
  auto g = f.detach();
  for (int64_t c = 0; c < 3; ++c) g.value()[c * 36 + 7] += eps;
  std::vector<std::vector<Frame>> pair = {{f.detach()}, {g}};
  auto m2 = metrics::diversity_std(pair);
  for (int64_t i = 0; i < 36; ++i) {
    if (i == 7)
      CHECK(m2[0].value()[i] == doctest::Approx(eps / 2).epsilon(1e-5));
    else
      CHECK(m2[0].value()[i] == 0.f);
  }

  CHECK_THROWS_AS(metrics::diversity_std({{f}}), ShapeError);
}

TEST_CASE("masked_mean splits a map by region") {
  Frame map = Frame::from_vec({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  Frame mask = Frame::from_vec({1, 1, 2, 2}, {1.f, 0.f, 0.f, 1.f});
  CHECK(*metrics::masked_mean(map, mask, true) == doctest::Approx(2.5));
  CHECK(*metrics::masked_mean(map, mask, false) == doctest::Approx(2.5));
  Frame none = Frame::zeros({1, 1, 2, 2});
  CHECK_FALSE(metrics::masked_mean(map, none, true).has_value());
}
