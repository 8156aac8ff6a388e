#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "smvp/synthdata.hpp"

using namespace smvp;
namespace fs = std::filesystem;
using F = diff::TensorT<float>;

namespace {

synth::SceneSpec static_scene() {
  synth::SceneSpec spec;
  spec.seed = 11;
  spec.frames = 4;
  spec.height = 24;
  spec.width = 48;
  spec.intrinsics = {36.0, 36.0, 23.5, 11.5};
  spec.forward_speed = 0.0;
  return spec;
}

// Mean absolute reconstruction error of frame t from frame t-1 through the
// ground-truth static warp followed by the residual-flow warp, over valid
// pixels.
double composed_reconstruction_error(const synth::SequenceBatch& b,
                                     int64_t t) {
  diff::NoGradGuard ng;
  auto prev = b.frame_tensor(t - 1);
  auto pose = geom::pose_to_tensor<float>(b.poses[static_cast<size_t>(t - 1)]);
  auto x_static =
      geom::inverse_warp(prev, b.depth_tensor(t), pose, b.intrinsics);
  auto recon = geom::flow_warp(x_static, b.residual_flow_tensor(t));
  auto target = b.frame_tensor(t);
  auto valid = b.valid_tensor(t);
  double err = 0;
  int64_t n = 0;
  const int64_t HW = b.H * b.W;
  for (int64_t i = 0; i < HW; ++i) {
    if (valid.value()[i] < 0.5f) continue;
    for (int64_t c = 0; c < 3; ++c)
      err += std::abs(recon.value()[c * HW + i] - target.value()[c * HW + i]);
    n += 3;
  }
  REQUIRE(n > 0);
  return err / static_cast<double>(n);
}

}  // namespace

TEST_CASE("static scene: identical frames and zero flows") {
  auto b = synth::generate(static_scene());
  for (int64_t t = 1; t < b.T; ++t) {
    for (int64_t i = 0; i < b.frame_elems(); ++i)
      CHECK(b.frames[t * b.frame_elems() + i] == b.frames[i]);
    for (int64_t i = 0; i < 2 * b.plane_elems(); ++i) {
      // Ego flow of the identity pose carries float32 pipeline rounding of
      // order 1e-6 pixels; residuals are zero by construction.
      CHECK(std::abs(b.flow_total[(t - 1) * 2 * b.plane_elems() + i]) <= 2e-6f);
      CHECK(b.flow_residual[(t - 1) * 2 * b.plane_elems() + i] == 0.f);
    }
  }
}

TEST_CASE("pure camera translation: GT warp reproduces the next frame") {
  auto spec = static_scene();
  spec.frames = 6;
  spec.lateral_speed = 0.12;
  auto b = synth::generate(spec);
  for (int64_t t = 1; t < b.T; ++t) {
    diff::NoGradGuard ng;
    auto pose = geom::pose_to_tensor<float>(b.poses[static_cast<size_t>(t - 1)]);
    auto recon = geom::inverse_warp(b.frame_tensor(t - 1), b.depth_tensor(t),
                                    pose, b.intrinsics);
    auto target = b.frame_tensor(t);
    auto valid = b.valid_tensor(t);
    double err = 0;
    int64_t n = 0;
    const int64_t HW = b.H * b.W;
    for (int64_t i = 0; i < HW; ++i) {
      if (valid.value()[i] < 0.5f) continue;
      for (int64_t c = 0; c < 3; ++c)
        err +=
            std::abs(recon.value()[c * HW + i] - target.value()[c * HW + i]);
      n += 3;
    }
    CHECK(err / static_cast<double>(n) < 2e-2);
  }
}

TEST_CASE("sprite at constant pixel velocity: residual flow is exact") {
  // Static camera, one sprite at depth 4 moving +0.25 units/frame in x with
  // fx = 36: pixel velocity +2.25/frame, so the sampling-convention residual
  // is exactly (-2.25, 0) on the sprite and zero elsewhere.
  auto spec = static_scene();
  spec.frames = 3;
  synth::ObjectSpec obj;
  obj.width = 1.6;
  obj.height = 1.2;
  obj.center = {-0.5, 0.2, 4.0};
  obj.velocity = {0.25, 0.0, 0.0};
  spec.objects = {obj};
  auto b = synth::generate(spec);

  const int64_t HW = b.H * b.W;
  for (int64_t t = 1; t < b.T; ++t) {
    const float* res = b.flow_residual.data() + (t - 1) * 2 * HW;
    const float* fg = b.fg_masks.data() + t * HW;
    int64_t fg_count = 0;
    for (int64_t i = 0; i < HW; ++i) {
      if (fg[i] > 0.5f) {
        ++fg_count;
        CHECK(res[i] == doctest::Approx(-2.25f).epsilon(1e-6));
        CHECK(res[HW + i] == doctest::Approx(0.f).epsilon(1e-6));
      } else {
        CHECK(res[i] == 0.f);
        CHECK(res[HW + i] == 0.f);
      }
    }
    CHECK(fg_count > 20);
  }
}

TEST_CASE("total flow equals ego flow plus residual, bit-exactly") {
  synth::SceneFamily family;
  family.frames = 8;
  family.height = 24;
  family.width = 48;
  family.velocity_jitter = 0.02;
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto b = synth::generate(synth::sample_scene_spec(seed, family));
    const int64_t HW = b.H * b.W;
    for (int64_t t = 1; t < b.T; ++t) {
      diff::NoGradGuard ng;
      auto pose =
          geom::pose_to_tensor<float>(b.poses[static_cast<size_t>(t - 1)]);
      auto ego = geom::ego_flow(b.depth_tensor(t), pose, b.intrinsics);
      const float* tot = b.flow_total.data() + (t - 1) * 2 * HW;
      const float* res = b.flow_residual.data() + (t - 1) * 2 * HW;
      const float* fg = b.fg_masks.data() + t * HW;
      for (int64_t i = 0; i < 2 * HW; ++i) {
        CHECK(tot[i] == ego.value()[i] + res[i]);
        if (fg[i % HW] < 0.5f) CHECK(res[i] == 0.f);
      }
    }
  }
}

TEST_CASE("fg mask matches the compositor exactly (IoU 1 on sprite hits)") {
  auto spec = static_scene();
  synth::ObjectSpec obj;
  obj.center = {0.0, 0.2, 5.0};
  spec.objects = {obj};
  auto b = synth::generate(spec);
  // The analytic footprint of a static sprite under a static camera.
  const auto& K = b.intrinsics;
  const int64_t HW = b.H * b.W;
  int64_t inside = 0;
  for (int64_t y = 0; y < b.H; ++y)
    for (int64_t x = 0; x < b.W; ++x) {
      const double wx = (static_cast<double>(x) - K.cx) / K.fx * 5.0;
      const double wy = (static_cast<double>(y) - K.cy) / K.fy * 5.0;
      const bool in_sprite = std::abs(wx - 0.0) <= obj.width / 2 &&
                             std::abs(wy - 0.2) <= obj.height / 2;
      CHECK(b.fg_masks[y * b.W + x] == (in_sprite ? 1.f : 0.f));
      inside += in_sprite;
    }
  CHECK(inside > 0);
  (void)HW;
}

TEST_CASE("GT consistency holds across a randomized scene family") {
  synth::SceneFamily family;
  family.frames = 10;
  family.height = 32;
  family.width = 64;
  family.velocity_jitter = 0.02;
  for (uint64_t seed = 100; seed < 105; ++seed) {
    auto b = synth::generate(synth::sample_scene_spec(seed, family));
    for (int64_t t = 1; t < b.T; ++t)
      CHECK(composed_reconstruction_error(b, t) < 2e-2);
  }
}

TEST_CASE("objects leaving the frustum abort generation with the object name") {
  auto spec = static_scene();
  synth::ObjectSpec obj;
  obj.center = {0.0, 0.2, 5.0};
  obj.velocity = {0.6, 0.0, 0.0};  // exits stage right
  spec.frames = 12;
  spec.objects = {obj};
  CHECK_THROWS_WITH_AS(synth::generate(spec), doctest::Contains("object 0"),
                       NumericError);
}

TEST_CASE("dataset round trip is bit-exact") {
  synth::SceneFamily family;
  family.frames = 6;
  family.height = 24;
  family.width = 48;
  auto b = synth::generate(synth::sample_scene_spec(7, family));
  const auto dir = fs::temp_directory_path() / "smvp_seq_rt";
  fs::remove_all(dir);
  synth::write_sequence(b, dir.string());
  auto r = synth::read_sequence(dir.string());
  CHECK(r.frames == b.frames);
  CHECK(r.depths == b.depths);
  CHECK(r.flow_total == b.flow_total);
  CHECK(r.flow_residual == b.flow_residual);
  CHECK(r.fg_masks == b.fg_masks);
  CHECK(r.valid_masks == b.valid_masks);
  REQUIRE(r.poses.size() == b.poses.size());
  for (size_t i = 0; i < r.poses.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      CHECK(r.poses[i].rotation[k] == b.poses[i].rotation[k]);
      CHECK(r.poses[i].translation[k] == b.poses[i].translation[k]);
    }
  fs::remove_all(dir);
}

TEST_CASE("corrupt manifest and missing files are rejected") {
  synth::SceneFamily family;
  family.frames = 4;
  family.height = 24;
  family.width = 48;
  auto b = synth::generate(synth::sample_scene_spec(9, family));
  const auto dir = fs::temp_directory_path() / "smvp_seq_bad";
  fs::remove_all(dir);
  synth::write_sequence(b, dir.string());

  SUBCASE("bad format tag") {
    {
      std::ofstream os(dir / "manifest.json");
      os << R"({"format":"other/v9"})";
    }
    CHECK_THROWS_AS(synth::read_sequence(dir.string()), FormatError);
  }
  SUBCASE("missing flow file") {
    fs::remove(dir / "flow_total_002.f32");
    CHECK_THROWS_WITH_AS(synth::read_sequence(dir.string()),
                         doctest::Contains("flow_total_002"), FormatError);
  }
  SUBCASE("truncated plane") {
    fs::resize_file(dir / "depth_001.f32", 16);
    CHECK_THROWS_WITH_AS(synth::read_sequence(dir.string()),
                         doctest::Contains("truncated"), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("generation is pure: same spec gives identical batches") {
  synth::SceneFamily family;
  family.frames = 5;
  family.height = 24;
  family.width = 48;
  family.velocity_jitter = 0.05;
  auto spec = synth::sample_scene_spec(4, family);
  auto a = synth::generate(spec);
  auto b = synth::generate(spec);
  CHECK(a.frames == b.frames);
  CHECK(a.flow_total == b.flow_total);
}

TEST_CASE("scene spec JSON round trip") {
  synth::SceneFamily family;
  family.velocity_jitter = 0.03;
  auto spec = synth::sample_scene_spec(21, family);
  auto j = synth::scene_spec_to_json(spec);
  auto back = synth::scene_spec_from_json(j);
  CHECK(back.seed == spec.seed);
  CHECK(back.trajectory == spec.trajectory);
  CHECK(back.objects.size() == spec.objects.size());
  CHECK(back.forward_speed == spec.forward_speed);
  CHECK(synth::generate(back).frames == synth::generate(spec).frames);

  CHECK_THROWS_AS(synth::scene_spec_from_json(
                      {{"trajectory", "warp_drive"}}),
                  ConfigError);
}
