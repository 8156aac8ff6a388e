#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smvp/check_cases.hpp"
#include "smvp/geometry.hpp"
#include "smvp/gradcheck.hpp"

using namespace smvp;
using D = diff::TensorT<double>;
using F = diff::TensorT<float>;

namespace {
// Dyadic-friendly intrinsics keep the analytic cases exact in floating point.
const geom::Intrinsics kDyadic{8.0, 8.0, 2.5, 1.5};
const geom::Intrinsics kSpec{10.0, 10.0, 3.5, 2.5};
}  // namespace

TEST_CASE("pose composed with its inverse is identity") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    geom::Pose p;
    for (int i = 0; i < 3; ++i) {
      p.rotation[i] = rng.uniform(-1.2, 1.2);
      p.translation[i] = rng.uniform(-2.0, 2.0);
    }
    auto id = p.compose(p.inverse());
    CHECK(id.rotation_magnitude() < 1e-6);
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(id.translation[i]) < 1e-6);
  }
}

TEST_CASE("identity pose gives the identity sampling grid") {
  Rng rng(5);
  auto depth = D::rand_uniform({1, 1, 5, 7}, rng, 0.3, 9.0);
  auto pose = geom::pose_to_tensor<double>(geom::Pose::identity());
  auto grid = geom::sampling_grid_from_depth_pose(depth, pose, kSpec);
  auto ident = geom::identity_grid<double>(1, 5, 7);
  for (int64_t i = 0; i < grid.numel(); ++i)
    CHECK(grid.value()[i] == doctest::Approx(ident.value()[i]).epsilon(1e-12));
}

TEST_CASE("pure x-translation shifts the grid by -fx*tx/depth") {
  // fx = 10, depth 1, tx = 0.1: every x-coordinate moves by exactly -1 pixel.
  auto depth1 = D::full({1, 1, 4, 6}, 1.0);
  geom::Pose motion;
  motion.translation = {0.1, 0.0, 0.0};
  auto pose = geom::pose_to_tensor<double>(motion);
  auto grid = geom::sampling_grid_from_depth_pose(depth1, pose, kSpec);
  auto ident = geom::identity_grid<double>(1, 4, 6);
  const int64_t n = 4 * 6;
  for (int64_t i = 0; i < n; ++i) {
    CHECK(grid.value()[i] - ident.value()[i] ==
          doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(grid.value()[n + i] - ident.value()[n + i] ==
          doctest::Approx(0.0).epsilon(1e-9));
  }
  // Depth 2 halves the offset (inverse-depth proportionality).
  auto depth2 = D::full({1, 1, 4, 6}, 2.0);
  auto grid2 = geom::sampling_grid_from_depth_pose(depth2, pose, kSpec);
  for (int64_t i = 0; i < n; ++i)
    CHECK(grid2.value()[i] - ident.value()[i] ==
          doctest::Approx(-0.5).epsilon(1e-9));
}

TEST_CASE("inverse-depth proportionality is exact on dyadic values") {
  // All quantities are small dyadic rationals, so each fp operation is exact
  // and the halving relation holds bit-for-bit.
  auto d1 = D::full({1, 1, 4, 6}, 1.0);
  auto d2 = D::full({1, 1, 4, 6}, 2.0);
  geom::Pose motion;
  motion.translation = {0.25, 0.0, 0.0};
  auto pose = geom::pose_to_tensor<double>(motion);
  auto f1 = geom::ego_flow(d1, pose, kDyadic);
  auto f2 = geom::ego_flow(d2, pose, kDyadic);
  for (int64_t i = 0; i < f1.numel(); ++i)
    CHECK(f1.value()[i] == 2.0 * f2.value()[i]);
}

TEST_CASE("ego flow equals grid minus identity, exactly") {
  Rng rng(21);
  auto depth = D::rand_uniform({1, 1, 5, 6}, rng, 1.0, 4.0);
  geom::Pose motion;
  motion.rotation = {0.01, -0.02, 0.005};
  motion.translation = {0.05, -0.02, 0.1};
  auto pose = geom::pose_to_tensor<double>(motion);
  auto grid = geom::sampling_grid_from_depth_pose(depth, pose, kSpec);
  auto flow = geom::ego_flow(depth, pose, kSpec);
  auto ident = geom::identity_grid<double>(1, 5, 6);
  for (int64_t i = 0; i < grid.numel(); ++i)
    CHECK(ident.value()[i] + flow.value()[i] == grid.value()[i]);
}

TEST_CASE("forward motion expands the field radially around the principal point") {
  geom::Intrinsics K{10.0, 10.0, 3.0, 2.0};  // principal point on a pixel
  auto depth = D::full({1, 1, 5, 7}, 4.0);
  geom::Pose motion;
  motion.translation = {0.0, 0.0, 1.0};  // tz > 0
  auto pose = geom::pose_to_tensor<double>(motion);
  auto flow = geom::ego_flow(depth, pose, K);
  const int64_t W = 7, n = 5 * 7;
  auto at = [&](int64_t y, int64_t x, int ch) {
    return flow.value()[ch * n + y * W + x];
  };
  // Probe the principal point and four offset pixels: analytic oracle
  // u' - u = (u - cx) * tz / (d - tz).
  auto oracle_x = [&](int64_t x) {
    return (static_cast<double>(x) - K.cx) * 1.0 / (4.0 - 1.0);
  };
  auto oracle_y = [&](int64_t y) {
    return (static_cast<double>(y) - K.cy) * 1.0 / (4.0 - 1.0);
  };
  CHECK(at(2, 3, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(at(2, 3, 1) == doctest::Approx(0.0).epsilon(1e-12));
  for (auto [y, x] : std::vector<std::pair<int64_t, int64_t>>{
           {0, 0}, {0, 6}, {4, 0}, {4, 6}}) {
    CHECK(at(y, x, 0) == doctest::Approx(oracle_x(x)).epsilon(1e-9));
    CHECK(at(y, x, 1) == doctest::Approx(oracle_y(y)).epsilon(1e-9));
    // Pointing away from the principal point.
    CHECK(at(y, x, 0) * (static_cast<double>(x) - K.cx) >= 0);
    CHECK(at(y, x, 1) * (static_cast<double>(y) - K.cy) >= 0);
  }
}

TEST_CASE("bilinear sampling: identity grid copies the source exactly") {
  Rng rng(31);
  auto src = F::rand_uniform({2, 3, 5, 6}, rng, 0, 1);
  auto out = geom::bilinear_sample(src, geom::identity_grid<float>(2, 5, 6));
  CHECK(out.value() == src.value());
}

TEST_CASE("bilinear sampling: midpoint and out-of-bounds") {
  auto src = D::from_vec({1, 1, 1, 2}, {0.0, 1.0});
  auto grid = D::from_vec({1, 2, 1, 1}, {0.5, 0.0});
  CHECK(geom::bilinear_sample(src, grid).item() == doctest::Approx(0.5));

  auto src4 = D::full({1, 1, 4, 4}, 0.7);
  auto far_grid = D::from_vec({1, 2, 1, 1}, {14.0, 1.0});
  CHECK(geom::bilinear_sample(src4, far_grid).item() == 0.0);
}

TEST_CASE("identity-pose warp round trip over random images and depths") {
  Rng rng(41);
  auto pose = geom::pose_to_tensor<float>(geom::Pose::identity());
  for (int trial = 0; trial < 20; ++trial) {
    auto img = F::rand_uniform({1, 3, 6, 8}, rng, 0, 1);
    auto depth = F::rand_uniform({1, 1, 6, 8}, rng, 0.5, 20.0);
    auto out = geom::inverse_warp(img, depth, pose, kSpec);
    // Interior pixels (border rows/cols excluded).
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 1; y < 5; ++y)
        for (int64_t x = 1; x < 7; ++x) {
          const auto i = (c * 6 + y) * 8 + x;
          CHECK(std::abs(out.value()[i] - img.value()[i]) < 1e-6f);
        }
  }
}

TEST_CASE("inverse_warp rejects non-positive depth") {
  auto img = D::full({1, 3, 4, 4}, 0.5);
  auto depth = D::zeros({1, 1, 4, 4});
  auto pose = geom::pose_to_tensor<double>(geom::Pose::identity());
  CHECK_THROWS_AS(geom::inverse_warp(img, depth, pose, kSpec), NumericError);
}

TEST_CASE("flow_warp: zero flow is exact, uniform flow shifts a ramp") {
  Rng rng(51);
  auto img = D::rand_uniform({1, 3, 4, 5}, rng, 0, 1);
  auto zero = D::zeros({1, 2, 4, 5});
  CHECK(geom::flow_warp(img, zero).value() == img.value());

  // Ramp image r(x) = x sampled at u + (1,0) reads r(x+1).
  std::vector<double> ramp(4 * 5);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 5; ++x) ramp[y * 5 + x] = static_cast<double>(x);
  auto rimg = D::from_vec({1, 1, 4, 5}, ramp);
  auto one = D::zeros({1, 2, 4, 5});
  for (int64_t i = 0; i < 20; ++i) one.value()[i] = 1.0;  // dx = 1
  auto shifted = geom::flow_warp(rimg, one);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x)
      CHECK(shifted.value()[y * 5 + x] == doctest::Approx(ramp[y * 5 + x] + 1));
}

TEST_CASE("flow_warp rejects flow beyond the image diagonal") {
  auto img = D::full({1, 3, 4, 4}, 0.5);
  auto flow = D::full({1, 2, 4, 4}, 100.0);
  CHECK_THROWS_AS(geom::flow_warp(img, flow), NumericError);
}

TEST_CASE("zero ego flow under the identity pose") {
  Rng rng(61);
  auto depth = D::rand_uniform({1, 1, 4, 4}, rng, 0.5, 10.0);
  auto pose = geom::pose_to_tensor<double>(geom::Pose::identity());
  auto flow = geom::ego_flow(depth, pose, kSpec);
  for (int64_t i = 0; i < flow.numel(); ++i)
    CHECK(std::abs(flow.value()[i]) < 1e-9);
}

TEST_CASE("out-of-frustum points sample as zero with zero gradient") {
  auto depth = D::full({1, 1, 2, 2}, 1.0, true);
  geom::Pose motion;
  motion.translation = {0.0, 0.0, 5.0};  // pushes z to 1 - 5 < 0
  auto pose = geom::pose_to_tensor<double>(motion);
  auto img = D::full({1, 1, 2, 2}, 0.9);
  auto out = geom::inverse_warp(img, depth, pose, kDyadic);
  for (auto v : out.value()) CHECK(v == 0.0);
  auto loss = diff::sum(out);
  loss.backward();
  for (auto g : depth.grad()) CHECK(g == 0.0);
}

TEST_CASE("geometry ops pass grad_check at non-degenerate configurations") {
  for (auto& [name, factory] : checks::geometry_cases()) {
    double worst = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(mix_seed(0x9e0278ull, hash_str(name), seed));
      auto c = factory(rng);
      auto res = diff::grad_check(c.f, c.inputs);
      worst = std::max(worst, res.max_rel_err);
    }
    INFO("geometry op ", name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("corrupted sampler gradient is caught by grad_check (negative control)") {
  geom::testing::corrupt_bilinear_grad = true;
  Rng rng(77);
  auto src = D::rand_uniform({1, 2, 4, 4}, rng, -1, 1);
  auto grid = D::rand_uniform({1, 2, 3, 3}, rng, 0.3, 2.6);
  auto f = [](std::vector<D>& in) {
    return diff::sum(diff::mul(geom::bilinear_sample(in[0], in[1]),
                               geom::bilinear_sample(in[0], in[1])));
  };
  auto res = diff::grad_check(f, {src, grid});
  geom::testing::corrupt_bilinear_grad = false;
  CHECK(res.max_rel_err > 1e-4);
}
