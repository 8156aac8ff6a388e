#pragma once

#include <functional>

#include "smvp/gradcheck.hpp"
#include "smvp/geometry.hpp"
#include "smvp/latent.hpp"
#include "smvp/ops.hpp"

namespace smvp::checks {

using diff::TensorT;
using D = TensorT<double>;

/// One randomized finite-difference case: inputs plus a deterministic
/// scalar-valued function of them.
struct GradCase {
  std::vector<D> inputs;
  std::function<D(std::vector<D>&)> f;
};

using CaseFactory = std::function<GradCase(Rng&)>;

inline D rand_input(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return D::rand_uniform(std::move(shape), rng, lo, hi);
}

/// Finite-difference cases for every entry of the primitive catalog.
/// verify fails if a catalog primitive has no case here.
inline std::vector<std::pair<std::string, CaseFactory>> primitive_cases() {
  using diff::TensorT;
  std::vector<std::pair<std::string, CaseFactory>> cases;
  auto add = [&](const std::string& name, CaseFactory f) {
    cases.emplace_back(name, std::move(f));
  };

  auto small4 = [](Rng& rng) {
    return Shape{rng.uniform_int(1, 2), rng.uniform_int(1, 3),
                 rng.uniform_int(2, 4), rng.uniform_int(2, 4)};
  };

  add("add", [small4](Rng& rng) {
    auto s = small4(rng);
    return GradCase{{rand_input(rng, s), rand_input(rng, s)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::add(in[0], in[1]));
                    }};
  });
  add("sub", [small4](Rng& rng) {
    auto s = small4(rng);
    return GradCase{{rand_input(rng, s), rand_input(rng, s)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::sub(in[0], in[1]));
                    }};
  });
  add("mul", [small4](Rng& rng) {
    auto s = small4(rng);
    return GradCase{{rand_input(rng, s), rand_input(rng, s)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::mul(in[0], in[1]));
                    }};
  });
  add("mul_scalar", [small4](Rng& rng) {
    auto s = small4(rng);
    const double c = rng.uniform(-2, 2);
    return GradCase{{rand_input(rng, s)}, [c](std::vector<D>& in) {
                      return diff::sum(diff::mul_scalar(in[0], c));
                    }};
  });
  add("add_scalar", [small4](Rng& rng) {
    auto s = small4(rng);
    const double c = rng.uniform(-2, 2);
    return GradCase{{rand_input(rng, s)}, [c](std::vector<D>& in) {
                      return diff::sum(diff::add_scalar(in[0], c));
                    }};
  });
  add("exp", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng))}, [](std::vector<D>& in) {
                      return diff::sum(diff::exp_t(in[0]));
                    }};
  });
  add("log", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng), 0.2, 3.0)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::log_t(in[0]));
                    }};
  });
  add("reciprocal", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng), 0.3, 3.0)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::reciprocal(in[0]));
                    }};
  });
  add("sigmoid", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng), -3, 3)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::sigmoid(in[0]));
                    }};
  });
  add("tanh", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng), -3, 3)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::tanh_t(in[0]));
                    }};
  });
  add("leaky_relu", [small4](Rng& rng) {
    // Keep values away from the kink where the derivative jumps.
    auto x = rand_input(rng, small4(rng), 0.1, 2.0);
    for (size_t i = 0; i < x.value().size(); i += 2) x.value()[i] *= -1.0;
    return GradCase{{x}, [](std::vector<D>& in) {
                      return diff::sum(diff::leaky_relu(in[0], 0.2));
                    }};
  });
  add("clamp", [small4](Rng& rng) {
    // Values stay clear of the clamp boundaries.
    return GradCase{{rand_input(rng, small4(rng), -0.8, 0.8)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::clamp(in[0], -1.0, 1.0));
                    }};
  });
  add("sum", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng))},
                    [](std::vector<D>& in) { return diff::sum(in[0]); }};
  });
  add("mean", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng))}, [](std::vector<D>& in) {
                      // Square first so the pullback is value-dependent.
                      return diff::mean(diff::mul(in[0], in[0]));
                    }};
  });
  add("sum_per_batch", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng))}, [](std::vector<D>& in) {
                      return diff::sum(
                          diff::mul(diff::sum_per_batch(in[0]),
                                    diff::sum_per_batch(in[0])));
                    }};
  });
  add("reshape", [small4](Rng& rng) {
    auto s = small4(rng);
    const int64_t n = shape_numel(s);
    return GradCase{{rand_input(rng, s)}, [n](std::vector<D>& in) {
                      auto r = diff::reshape(in[0], {n});
                      return diff::sum(diff::mul(r, r));
                    }};
  });
  add("concat_channels", [small4](Rng& rng) {
    auto s = small4(rng);
    auto s2 = s;
    s2[1] = rng.uniform_int(1, 3);
    return GradCase{{rand_input(rng, s), rand_input(rng, s2)},
                    [](std::vector<D>& in) {
                      auto c = diff::concat_channels<double>({in[0], in[1]});
                      return diff::sum(diff::mul(c, c));
                    }};
  });
  add("slice_channels", [](Rng& rng) {
    Shape s{2, 4, 2, 3};
    return GradCase{{rand_input(rng, s)}, [](std::vector<D>& in) {
                      auto sl = diff::slice_channels(in[0], 1, 3);
                      return diff::sum(diff::mul(sl, sl));
                    }};
  });
  add("upsample_nearest", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng))}, [](std::vector<D>& in) {
                      auto u = diff::upsample_nearest(in[0], 2);
                      return diff::sum(diff::mul(u, u));
                    }};
  });
  add("global_avg_pool", [small4](Rng& rng) {
    return GradCase{{rand_input(rng, small4(rng))}, [](std::vector<D>& in) {
                      auto p = diff::global_avg_pool(in[0]);
                      return diff::sum(diff::mul(p, p));
                    }};
  });
  add("channel_scale", [small4](Rng& rng) {
    auto s = small4(rng);
    Shape gate{s[0], s[1], 1, 1};
    return GradCase{{rand_input(rng, s), rand_input(rng, gate)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::channel_scale(in[0], in[1]));
                    }};
  });
  add("mul_bcast_channel", [small4](Rng& rng) {
    auto s = small4(rng);
    Shape m{s[0], 1, s[2], s[3]};
    return GradCase{{rand_input(rng, s), rand_input(rng, m)},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::mul_bcast_channel(in[0], in[1]));
                    }};
  });
  add("conv2d", [](Rng& rng) {
    const int64_t k = rng.uniform_int(0, 1) ? 3 : 1;
    const int64_t s = rng.uniform_int(1, 2);
    const int64_t p = rng.uniform_int(0, 1);
    const int64_t C = rng.uniform_int(1, 2), O = rng.uniform_int(1, 2);
    const int64_t H = k + rng.uniform_int(0, 3), W = k + rng.uniform_int(0, 3);
    return GradCase{{rand_input(rng, {1, C, H, W}),
                     rand_input(rng, {O, C, k, k}), rand_input(rng, {O})},
                    [s, p](std::vector<D>& in) {
                      auto y = diff::conv2d(in[0], in[1], in[2], s, p);
                      return diff::sum(diff::mul(y, y));
                    }};
  });
  add("conv_transpose2d", [](Rng& rng) {
    const int64_t k = 3;
    const int64_t s = rng.uniform_int(1, 2);
    const int64_t p = rng.uniform_int(0, 1);
    const int64_t C = rng.uniform_int(1, 2), O = rng.uniform_int(1, 2);
    const int64_t H = rng.uniform_int(2, 4), W = rng.uniform_int(2, 4);
    return GradCase{{rand_input(rng, {1, C, H, W}),
                     rand_input(rng, {C, O, k, k}), rand_input(rng, {O})},
                    [s, p](std::vector<D>& in) {
                      auto y = diff::conv_transpose2d(in[0], in[1], in[2], s, p);
                      return diff::sum(diff::mul(y, y));
                    }};
  });
  add("bmm", [](Rng& rng) {
    const int64_t B = rng.uniform_int(1, 2), M = rng.uniform_int(1, 3),
                  K = rng.uniform_int(1, 3), N = rng.uniform_int(1, 3);
    return GradCase{{rand_input(rng, {B, M, K}), rand_input(rng, {B, K, N})},
                    [](std::vector<D>& in) {
                      return diff::sum(diff::bmm(in[0], in[1]));
                    }};
  });
  add("add_cols", [](Rng& rng) {
    const int64_t B = rng.uniform_int(1, 2), M = rng.uniform_int(1, 3),
                  N = rng.uniform_int(1, 4);
    return GradCase{{rand_input(rng, {B, M, N}), rand_input(rng, {B, M})},
                    [](std::vector<D>& in) {
                      auto y = diff::add_cols(in[0], in[1], -1.0);
                      return diff::sum(diff::mul(y, y));
                    }};
  });
  return cases;
}

/// Geometry op cases: rotation, backproject/project, the full sampling grid,
/// bilinear sampling and the composed warps.
inline std::vector<std::pair<std::string, CaseFactory>> geometry_cases() {
  std::vector<std::pair<std::string, CaseFactory>> cases;
  auto add = [&](const std::string& name, CaseFactory f) {
    cases.emplace_back(name, std::move(f));
  };
  const geom::Intrinsics K{6.0, 5.0, 1.5, 2.0};

  add("rotation_from_axis_angle", [](Rng& rng) {
    // Frobenius norm of a rotation matrix is constant, so weight the entries
    // to get a non-degenerate scalar.
    auto weights = rand_input(rng, {2, 3, 3});
    return GradCase{{rand_input(rng, {2, 3}, -0.8, 0.8)},
                    [weights](std::vector<D>& in) {
                      auto R = geom::rotation_from_axis_angle(in[0]);
                      return diff::sum(diff::mul(R, weights));
                    }};
  });
  add("backproject", [K](Rng& rng) {
    return GradCase{{rand_input(rng, {1, 1, 3, 4}, 0.5, 3.0)},
                    [K](std::vector<D>& in) {
                      auto p = geom::backproject(in[0], K);
                      return diff::sum(diff::mul(p, p));
                    }};
  });
  add("project_pinhole", [K](Rng& rng) {
    auto pts = rand_input(rng, {1, 3, 5}, -1.0, 1.0);
    for (int64_t i = 0; i < 5; ++i)
      pts.value()[2 * 5 + i] = rng.uniform(1.0, 3.0);  // z well in frustum
    return GradCase{{pts}, [K](std::vector<D>& in) {
                      auto uv = geom::project_pinhole(in[0], K);
                      return diff::sum(diff::mul(uv, uv));
                    }};
  });
  add("sampling_grid_from_depth_pose", [K](Rng& rng) {
    auto depth = rand_input(rng, {1, 1, 4, 5}, 1.0, 3.0);
    auto pose = rand_input(rng, {1, 6}, -0.05, 0.05);
    return GradCase{{depth, pose}, [K](std::vector<D>& in) {
                      auto g = geom::sampling_grid_from_depth_pose(in[0], in[1], K);
                      return diff::sum(diff::mul(g, g));
                    }};
  });
  add("bilinear_sample", [](Rng& rng) {
    auto src = rand_input(rng, {1, 2, 4, 4});
    auto grid = rand_input(rng, {1, 2, 3, 3}, 0.3, 2.6);
    return GradCase{{src, grid}, [](std::vector<D>& in) {
                      auto y = geom::bilinear_sample(in[0], in[1]);
                      return diff::sum(diff::mul(y, y));
                    }};
  });
  add("inverse_warp", [K](Rng& rng) {
    // Translations large enough to spread the sampling positions away from
    // the integer grid, where the interpolation weights have kinks.
    auto prev = rand_input(rng, {1, 3, 4, 5}, 0.0, 1.0);
    auto depth = rand_input(rng, {1, 1, 4, 5}, 1.5, 2.5);
    auto pose = rand_input(rng, {1, 6}, -0.3, 0.3);
    for (int i = 0; i < 3; ++i) pose.value()[i] *= 0.1;  // modest rotation
    return GradCase{{prev, depth, pose}, [K](std::vector<D>& in) {
                      auto y = geom::inverse_warp(in[0], in[1], in[2], K);
                      return diff::sum(diff::mul(y, y));
                    }};
  });
  add("flow_warp", [](Rng& rng) {
    auto src = rand_input(rng, {1, 2, 4, 4}, 0.0, 1.0);
    auto flow = rand_input(rng, {1, 2, 4, 4}, -0.7, 0.7);
    return GradCase{{src, flow}, [](std::vector<D>& in) {
                      auto y = geom::flow_warp(in[0], in[1]);
                      return diff::sum(diff::mul(y, y));
                    }};
  });
  add("ego_flow", [K](Rng& rng) {
    auto depth = rand_input(rng, {1, 1, 4, 5}, 1.0, 3.0);
    auto pose = rand_input(rng, {1, 6}, -0.05, 0.05);
    return GradCase{{depth, pose}, [K](std::vector<D>& in) {
                      auto f = geom::ego_flow(in[0], in[1], K);
                      return diff::sum(diff::mul(f, f));
                    }};
  });
  return cases;
}

/// Latent machinery cases.
inline std::vector<std::pair<std::string, CaseFactory>> latent_cases() {
  std::vector<std::pair<std::string, CaseFactory>> cases;
  auto add = [&](const std::string& name, CaseFactory f) {
    cases.emplace_back(name, std::move(f));
  };
  add("sample_reparam", [](Rng& rng) {
    Shape s{2, 3, 2, 2};
    auto noise = D::randn(s, rng);
    return GradCase{{rand_input(rng, s), rand_input(rng, s, -1.0, 1.0)},
                    [noise](std::vector<D>& in) {
                      latent::DiagonalGaussian<double> d(in[0], in[1]);
                      auto z = latent::sample_reparam(d, noise);
                      return diff::sum(diff::mul(z.value, z.value));
                    }};
  });
  add("kl_diag_gaussian", [](Rng& rng) {
    Shape s{2, 3, 2, 2};
    return GradCase{{rand_input(rng, s), rand_input(rng, s, -1.0, 1.0),
                     rand_input(rng, s), rand_input(rng, s, -1.0, 1.0)},
                    [](std::vector<D>& in) {
                      latent::DiagonalGaussian<double> q(in[0], in[1]);
                      latent::DiagonalGaussian<double> p(in[2], in[3]);
                      return diff::sum(latent::kl_diag_gaussian(q, p));
                    }};
  });
  add("sigma_vae_nll", [](Rng& rng) {
    Shape s{1, 2, 3, 3};
    return GradCase{{rand_input(rng, s), rand_input(rng, s)},
                    [](std::vector<D>& in) {
                      return latent::sigma_vae_nll(in[0], in[1]).loss;
                    }};
  });
  return cases;
}

}  // namespace smvp::checks
