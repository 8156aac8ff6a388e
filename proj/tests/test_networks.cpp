#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smvp/gradcheck.hpp"
#include "smvp/networks.hpp"

using namespace smvp;
using diff::ParameterSet;
using D = diff::TensorT<double>;
using F = diff::TensorT<float>;

namespace {

nets::NetDims desk_dims() {
  nets::NetDims d;
  d.stage_channels = {16, 24, 32, 48};
  d.bottleneck_channels = 64;
  return d;
}

nets::NetDims toy_dims() {
  nets::NetDims d;
  d.stage_channels = {4, 6};
  d.bottleneck_channels = 8;
  d.head_channels = 4;
  d.hidden_channels = 8;
  d.latent_channels = 2;
  d.predictor_channels = 8;
  // A narrow depth range keeps the disparity squash well conditioned for
  // central differences; the wide default belongs to training configs.
  d.depth_min = 0.5;
  d.depth_max = 5.0;
  // Composition checks run with the kinked activation disabled: a central
  // difference straddling the leaky-ReLU kink is invalid, and a bias
  // perturbation moves a whole channel of pre-activations across it. The
  // kink's own gradient is covered by the per-op check.
  d.leaky_slope = 1.0;
  return d;
}

template <class T>
void zero_params(ParameterSet<T>& ps) {
  for (auto& [name, p] : ps)
    std::fill(p.value().begin(), p.value().end(), T(0));
}

// Collects parameter tensors for finite-difference checking.
std::vector<D> param_tensors(ParameterSet<double>& ps) {
  std::vector<D> out;
  for (auto& [name, p] : ps) out.push_back(p);
  return out;
}

}  // namespace

TEST_CASE("conv_lstm with all-zero parameters halves the cell") {
  ParameterSet<double> ps;
  nets::ConvLSTMCell<double> cell(ps, "c", 3, 2, 1);
  zero_params(ps);
  Rng rng(9);
  auto state = nets::ConvLSTMState<double>::zeros(1, 2, 3, 3);
  state.cell = D::rand_uniform({1, 2, 3, 3}, rng, -2, 2);
  auto input = D::rand_uniform({1, 3, 3, 3}, rng, -1, 1);
  auto next = cell.step(state, input);
  // Gates sit at sigmoid(0) = 0.5 and tanh(0) = 0.
  for (int64_t i = 0; i < next.cell.numel(); ++i) {
    CHECK(next.cell.value()[i] ==
          doctest::Approx(0.5 * state.cell.value()[i]).epsilon(1e-12));
    CHECK(next.hidden.value()[i] ==
          doctest::Approx(0.5 * std::tanh(0.5 * state.cell.value()[i]))
              .epsilon(1e-12));
  }
}

TEST_CASE("conv_lstm zero state and zero params is a fixed point") {
  ParameterSet<double> ps;
  nets::ConvLSTMCell<double> cell(ps, "c", 2, 2, 1);
  zero_params(ps);
  auto state = nets::ConvLSTMState<double>::zeros(1, 2, 2, 2);
  auto next = cell.step(state, D::zeros({1, 2, 2, 2}));
  for (auto v : next.cell.value()) CHECK(v == 0.0);
  for (auto v : next.hidden.value()) CHECK(v == 0.0);
}

TEST_CASE("conv_lstm step passes grad_check w.r.t. input and params") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ParameterSet<double> ps;
    nets::ConvLSTMCell<double> cell(ps, "c", 2, 2, mix_seed(31, seed));
    Rng rng(mix_seed(32, seed));
    auto state = nets::ConvLSTMState<double>::zeros(1, 2, 2, 3);
    state.cell = D::rand_uniform({1, 2, 2, 3}, rng, -1, 1);
    state.hidden = D::rand_uniform({1, 2, 2, 3}, rng, -1, 1);
    std::vector<D> inputs = {D::rand_uniform({1, 2, 2, 3}, rng, -1, 1)};
    for (auto t : param_tensors(ps)) inputs.push_back(t);
    auto f = [&cell, &state](std::vector<D>& in) {
      auto next = cell.step(state, in[0]);
      return diff::add(diff::sum(diff::mul(next.hidden, next.hidden)),
                       diff::sum(diff::mul(next.cell, next.cell)));
    };
    auto res = diff::grad_check(f, inputs);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("conv_lstm iterated 50 steps on bounded inputs stays bounded") {
  ParameterSet<float> ps;
  nets::ConvLSTMCell<float> cell(ps, "c", 3, 4, 77);
  Rng rng(78);
  auto state = nets::ConvLSTMState<float>::zeros(1, 4, 2, 4);
  double max_cell = 0;
  for (int i = 0; i < 50; ++i) {
    auto input = F::rand_uniform({1, 3, 2, 4}, rng, -1, 1);
    state = cell.step(state, input);
    CHECK_FALSE(state.cell.has_nonfinite());
    CHECK_FALSE(state.hidden.has_nonfinite());
    for (auto v : state.hidden.value()) CHECK(std::abs(v) <= 1.0f);
    for (auto v : state.cell.value())
      max_cell = std::max(max_cell, static_cast<double>(std::abs(v)));
  }
  // |cell| can grow at most linearly: each step adds at most 1.
  CHECK(max_cell <= 50.0);
}

TEST_CASE("desk encoder: 32x64 input reaches a 2x4 bottleneck at 64 channels") {
  ParameterSet<float> ps;
  nets::ImageEncoder<float> enc(ps, "enc", desk_dims(), 5);
  Rng rng(6);
  auto frame = F::rand_uniform({2, 3, 32, 64}, rng, 0, 1);
  auto res = enc(frame);
  CHECK(res.bottleneck.shape() == Shape{2, 64, 2, 4});
  REQUIRE(res.skips.size() == 4);
  CHECK(res.skips[0].shape() == Shape{2, 16, 16, 32});
  CHECK(res.skips[1].shape() == Shape{2, 24, 8, 16});
  CHECK(res.skips[2].shape() == Shape{2, 32, 4, 8});
  CHECK(res.skips[3].shape() == Shape{2, 48, 2, 4});
  // Strictly decreasing resolutions.
  for (size_t i = 1; i < res.skips.size(); ++i)
    CHECK(res.skips[i].size(2) < res.skips[i - 1].size(2));

  // Determinism: identical frames give identical features.
  auto res2 = enc(frame);
  CHECK(res.bottleneck.value() == res2.bottleneck.value());
}

TEST_CASE("full-scale channel plan: 92x310 input reaches a 3x10 bottleneck at 128") {
  nets::NetDims d;
  d.stage_channels = {64, 96, 128, 196, 256};
  d.bottleneck_channels = 128;
  ParameterSet<float> ps;
  nets::ImageEncoder<float> enc(ps, "enc", d, 5);
  auto frame = F::zeros({1, 3, 92, 310});
  auto res = enc(frame);
  CHECK(res.bottleneck.shape() == Shape{1, 128, 3, 10});
}

TEST_CASE("decoder rejects a skip stack of the wrong depth") {
  auto d = toy_dims();
  ParameterSet<float> ps;
  nets::PyramidDecoder<float> dec(ps, "pd", d.predictor_channels, 1, d, 5);
  Rng rng(6);
  auto g = F::rand_uniform({1, d.predictor_channels, 2, 4}, rng, -1, 1);
  nets::SkipStack<float> bad = {F::zeros({1, 4, 4, 8})};
  CHECK_THROWS_AS(dec(g, bad), ShapeError);
}

TEST_CASE("feature heads produce bottleneck-resolution features") {
  auto d = toy_dims();
  ParameterSet<float> ps;
  nets::FeatureHead<float> depth_head(ps, "hd", d.bottleneck_channels, d, 3);
  nets::FeatureHead<float> pose_head(ps, "hp", 2 * d.bottleneck_channels, d, 3);
  Rng rng(4);
  auto e = F::rand_uniform({1, d.bottleneck_channels, 2, 4}, rng, -1, 1);
  auto hd = depth_head(e);
  CHECK(hd.shape() == Shape{1, d.head_channels, 2, 4});
  // Zero-motion bootstrap: pose head fed the same frame twice stays finite.
  auto hp = pose_head(diff::concat_channels<float>({e, e}));
  CHECK(hp.shape() == Shape{1, d.head_channels, 2, 4});
  CHECK_FALSE(hp.has_nonfinite());
}

TEST_CASE("motion head passes grad_check w.r.t. the static predictor output") {
  auto d = toy_dims();
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ParameterSet<double> ps;
    nets::FeatureHead<double> motion(
        ps, "hm", d.predictor_channels + d.bottleneck_channels, d,
        mix_seed(41, seed));
    Rng rng(mix_seed(42, seed));
    auto e = D::rand_uniform({1, d.bottleneck_channels, 2, 2}, rng, -1, 1);
    auto f = [&motion, &e](std::vector<D>& in) {
      auto h = motion(diff::concat_channels<double>({in[0], e}));
      return diff::sum(diff::mul(h, h));
    };
    auto res = diff::grad_check(
        f, {D::rand_uniform({1, d.predictor_channels, 2, 2}, rng, -1, 1)});
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("depth decoder respects the configured depth bounds") {
  auto d = toy_dims();
  d.depth_min = 0.1;  // spec-default bounds
  d.depth_max = 100.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ParameterSet<float> ps;
    nets::DepthDecoder<float> dec(ps, "dd", d.predictor_channels, d,
                                  mix_seed(51, seed));
    ParameterSet<float> ps_enc;
    nets::ImageEncoder<float> enc(ps_enc, "enc", d, mix_seed(52, seed));
    Rng rng(mix_seed(53, seed));
    auto frame = F::rand_uniform({1, 3, 8, 16}, rng, 0, 1);
    auto er = enc(frame);
    auto g = F::rand_uniform({1, d.predictor_channels, 2, 4}, rng, -3, 3);
    auto depth = dec(g, er.skips);
    CHECK(depth.shape() == Shape{1, 1, 8, 16});
    for (auto v : depth.value()) {
      CHECK(v >= 0.1f);
      CHECK(v <= 100.0f);
    }
  }
}

TEST_CASE("depth decoder at zero parameters sits at 1/(a/2 + b)") {
  auto d = toy_dims();
  d.depth_min = 0.1;
  d.depth_max = 100.0;
  ParameterSet<double> ps, ps_enc;
  nets::DepthDecoder<double> dec(ps, "dd", d.predictor_channels, d, 1);
  nets::ImageEncoder<double> enc(ps_enc, "enc", d, 2);
  zero_params(ps);
  zero_params(ps_enc);
  auto er = enc(D::zeros({1, 3, 8, 16}));
  auto depth = dec(D::zeros({1, d.predictor_channels, 2, 4}), er.skips);
  const double a = 1.0 / 0.1 - 1.0 / 100.0, b = 1.0 / 100.0;
  for (auto v : depth.value())
    CHECK(v == doctest::Approx(1.0 / (0.5 * a + b)).epsilon(1e-12));
}

TEST_CASE("pose decoder: zero params give identity, rotation bounded below pi") {
  auto d = toy_dims();
  {
    ParameterSet<double> ps;
    nets::PoseDecoder<double> dec(ps, "dp", d.predictor_channels, d, 1);
    zero_params(ps);
    auto pose = dec(D::full({1, d.predictor_channels, 2, 4}, 0.37));
    for (auto v : pose.value()) CHECK(v == 0.0);
  }
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ParameterSet<float> ps;
    nets::PoseDecoder<float> dec(ps, "dp", d.predictor_channels, d,
                                 mix_seed(61, seed));
    Rng rng(mix_seed(62, seed));
    auto pose = dec(F::rand_uniform({2, d.predictor_channels, 2, 4}, rng, -5, 5));
    for (int64_t b = 0; b < 2; ++b) {
      auto p = geom::pose_from_tensor(pose, b);
      CHECK(p.rotation_magnitude() < 3.141592653589793);
    }
  }
}

TEST_CASE("pose decoder passes grad_check") {
  auto d = toy_dims();
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ParameterSet<double> ps;
    nets::PoseDecoder<double> dec(ps, "dp", d.predictor_channels, d,
                                  mix_seed(63, seed));
    Rng rng(mix_seed(64, seed));
    std::vector<D> inputs = {
        D::rand_uniform({1, d.predictor_channels, 2, 2}, rng, -1, 1)};
    for (auto t : param_tensors(ps)) inputs.push_back(t);
    auto f = [&dec](std::vector<D>& in) {
      auto p = dec(in[0]);
      return diff::sum(diff::mul(p, p));
    };
    auto res = diff::grad_check(f, inputs);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("flow/mask decoder: zero params give zero flow and a 0.5 mask") {
  auto d = toy_dims();
  ParameterSet<double> ps, ps_enc;
  nets::FlowMaskDecoder<double> dec(ps, "df", d.predictor_channels, d, 1);
  nets::ImageEncoder<double> enc(ps_enc, "enc", d, 2);
  zero_params(ps);
  zero_params(ps_enc);
  auto er = enc(D::zeros({1, 3, 8, 16}));
  auto fm = dec(D::zeros({1, d.predictor_channels, 2, 4}), er.skips);
  for (auto v : fm.flow.value()) CHECK(v == 0.0);
  for (auto v : fm.mask.value()) CHECK(v == 0.5);
}

TEST_CASE("flow stays inside max_flow and mask inside [0,1]") {
  auto d = toy_dims();
  d.max_flow = 16.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ParameterSet<float> ps, ps_enc;
    nets::FlowMaskDecoder<float> dec(ps, "df", d.predictor_channels, d,
                                     mix_seed(71, seed));
    nets::ImageEncoder<float> enc(ps_enc, "enc", d, mix_seed(72, seed));
    Rng rng(mix_seed(73, seed));
    auto er = enc(F::rand_uniform({1, 3, 8, 16}, rng, 0, 1));
    auto fm = dec(F::rand_uniform({1, d.predictor_channels, 2, 4}, rng, -3, 3),
                  er.skips);
    for (auto v : fm.flow.value()) CHECK(std::abs(v) <= 16.0f);
    for (auto v : fm.mask.value()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("encoder-to-decoder stack passes grad_check on the 16x8 toy config") {
  auto d = toy_dims();
  double worst = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    ParameterSet<double> ps;
    nets::ImageEncoder<double> enc(ps, "enc", d, mix_seed(81, seed));
    nets::DepthDecoder<double> dec(ps, "dd", d.bottleneck_channels, d,
                                   mix_seed(82, seed));
    Rng rng(mix_seed(83, seed));
    std::vector<D> inputs = {D::rand_uniform({1, 3, 8, 16}, rng, 0, 1)};
    for (auto t : param_tensors(ps)) inputs.push_back(t);
    auto f = [&enc, &dec](std::vector<D>& in) {
      auto er = enc(in[0]);
      auto depth = dec(er.bottleneck, er.skips);
      return diff::mean(diff::mul(depth, depth));
    };
    diff::GradCheckOptions opts;
    opts.max_coords_per_input = 4;  // parameter tensors are large
    opts.coord_seed = mix_seed(84, seed);
    auto res = diff::grad_check(f, inputs, opts);
    worst = std::max(worst, res.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("squeeze-excitation gate keeps shape and rescales channels") {
  ParameterSet<double> ps;
  nets::SELayer<double> se(ps, "se", 4, 2, 9);
  Rng rng(10);
  auto x = D::rand_uniform({2, 4, 3, 3}, rng, -1, 1);
  auto y = se(x);
  CHECK(y.shape() == x.shape());
  // With zero parameters the gate is sigmoid(0) = 0.5 everywhere.
  zero_params(ps);
  auto y0 = se(x);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y0.value()[i] == doctest::Approx(0.5 * x.value()[i]));
}
