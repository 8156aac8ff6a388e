#include "smvp/synthdata.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace smvp::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

void SceneSpec::validate() const {
  if (frames < 2) throw ConfigError("scene: needs at least 2 frames");
  if (height < 8 || width < 8) throw ConfigError("scene: resolution too small");
  intrinsics.validate(width, height);
  if (ground_y <= 0) throw ConfigError("scene: camera must sit above the ground");
  if (wall_z <= 1.0) throw ConfigError("scene: wall too close");
}

// ---------------------------------------------------------------------------
// Textures: sums of a few world-anchored sinusoids per channel. Band-limited
// by construction, which keeps bilinear-interpolation error inside the
// reconstruction-oracle budget.

namespace {

struct Wave {
  double fu, fv, phase, amp;
};

struct TrigTexture {
  std::array<std::vector<Wave>, 3> waves;
  std::array<double, 3> base{0.5, 0.5, 0.5};

  static TrigTexture make(Rng& rng, double fu_lo, double fu_hi, double fv_lo,
                          double fv_hi) {
    TrigTexture tex;
    const double amps[3] = {0.19, 0.114, 0.076};
    for (int c = 0; c < 3; ++c) {
      tex.base[c] = rng.uniform(0.38, 0.62);
      for (int k = 0; k < 3; ++k) {
        Wave w;
        w.fu = rng.uniform(fu_lo, fu_hi) * (rng.uniform() < 0.5 ? -1 : 1);
        w.fv = rng.uniform(fv_lo, fv_hi) * (rng.uniform() < 0.5 ? -1 : 1);
        w.phase = rng.uniform(0, 2 * M_PI);
        w.amp = amps[k] * rng.uniform(0.75, 1.0);
        tex.waves[c].push_back(w);
      }
    }
    return tex;
  }

  std::array<double, 3> eval(double u, double v) const {
    std::array<double, 3> rgb;
    for (int c = 0; c < 3; ++c) {
      double acc = base[c];
      for (const auto& w : waves[c])
        acc += w.amp * std::sin(2 * M_PI * (w.fu * u + w.fv * v) + w.phase);
      rgb[c] = std::min(0.98, std::max(0.02, acc));
    }
    return rgb;
  }
};

struct CamPose {
  std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};  // cam -> world
  std::array<double, 3> p{0, 0, 0};
};

std::array<double, 9> yaw_matrix(double th) {
  const double c = std::cos(th), s = std::sin(th);
  return {c, 0, s, 0, 1, 0, -s, 0, c};
}

std::array<double, 3> mat_vec(const std::array<double, 9>& R,
                              const std::array<double, 3>& v) {
  return {R[0] * v[0] + R[1] * v[1] + R[2] * v[2],
          R[3] * v[0] + R[4] * v[1] + R[5] * v[2],
          R[6] * v[0] + R[7] * v[1] + R[8] * v[2]};
}

std::array<double, 3> mat_t_vec(const std::array<double, 9>& R,
                                const std::array<double, 3>& v) {
  return {R[0] * v[0] + R[3] * v[1] + R[6] * v[2],
          R[1] * v[0] + R[4] * v[1] + R[7] * v[2],
          R[2] * v[0] + R[5] * v[1] + R[8] * v[2]};
}

struct ScenePaths {
  std::vector<CamPose> cams;                              // per frame
  std::vector<std::vector<std::array<double, 3>>> centers;  // [obj][frame]
};

ScenePaths build_paths(const SceneSpec& spec) {
  ScenePaths paths;
  paths.cams.resize(static_cast<size_t>(spec.frames));
  double yaw = 0;
  std::array<double, 3> p{0, 0, 0};
  for (int64_t t = 0; t < spec.frames; ++t) {
    paths.cams[static_cast<size_t>(t)].R = yaw_matrix(yaw);
    paths.cams[static_cast<size_t>(t)].p = p;
    double speed = spec.forward_speed;
    if (spec.trajectory == Trajectory::kStopAndGo)
      speed *= 0.5 * (1.0 + std::cos(2 * M_PI * static_cast<double>(t) /
                                     static_cast<double>(spec.frames)));
    const auto step = mat_vec(yaw_matrix(yaw),
                              {spec.lateral_speed, 0.0, speed});
    for (int i = 0; i < 3; ++i) p[i] += step[i];
    if (spec.trajectory == Trajectory::kTurn) yaw += spec.yaw_rate;
  }
  paths.centers.resize(spec.objects.size());
  for (size_t k = 0; k < spec.objects.size(); ++k) {
    const auto& obj = spec.objects[k];
    Rng rng(mix_seed(spec.seed, 0x0b7ec7, static_cast<uint64_t>(k)));
    auto c = obj.center;
    auto v = obj.velocity;
    paths.centers[k].resize(static_cast<size_t>(spec.frames));
    for (int64_t t = 0; t < spec.frames; ++t) {
      paths.centers[k][static_cast<size_t>(t)] = c;
      if (obj.velocity_jitter > 0) {
        v[0] += obj.velocity_jitter * rng.normal();
        v[1] += obj.velocity_jitter * rng.normal();
      }
      for (int i = 0; i < 3; ++i) c[i] += v[i];
    }
  }
  return paths;
}

/// Projects a world point into a camera; returns (u, v, z_cam).
std::array<double, 3> project_world(const CamPose& cam,
                                    const geom::Intrinsics& K,
                                    const std::array<double, 3>& P) {
  const std::array<double, 3> d{P[0] - cam.p[0], P[1] - cam.p[1],
                                P[2] - cam.p[2]};
  const auto X = mat_t_vec(cam.R, d);
  if (X[2] < 1e-9) return {0, 0, X[2]};
  return {K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy, X[2]};
}

void check_frustum(const SceneSpec& spec, const ScenePaths& paths) {
  for (size_t k = 0; k < spec.objects.size(); ++k) {
    const auto& obj = spec.objects[k];
    for (int64_t t = 0; t < spec.frames; ++t) {
      const auto& c = paths.centers[k][static_cast<size_t>(t)];
      for (int corner = 0; corner < 4; ++corner) {
        const double dx = (corner & 1) ? obj.width / 2 : -obj.width / 2;
        const double dy = (corner & 2) ? obj.height / 2 : -obj.height / 2;
        const auto uvz =
            project_world(paths.cams[static_cast<size_t>(t)], spec.intrinsics,
                          {c[0] + dx, c[1] + dy, c[2]});
        if (uvz[2] < 0.8 || uvz[0] < 0.0 ||
            uvz[0] > static_cast<double>(spec.width - 1) || uvz[1] < 0.0 ||
            uvz[1] > static_cast<double>(spec.height - 1))
          throw NumericError("scene generation: object " + std::to_string(k) +
                             " leaves the frustum at frame " +
                             std::to_string(t));
      }
    }
  }
}

constexpr int kGround = 0;
constexpr int kWall = 1;
constexpr int kSprite0 = 2;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int surface = -1;
  std::array<double, 3> world{0, 0, 0};
};

/// Exact nearest-surface query along the ray of a (possibly fractional)
/// pixel. The ray parameter equals camera z-depth because the camera-frame
/// direction is normalized to unit z.
struct Caster {
  const SceneSpec& spec;
  const ScenePaths& paths;

  Hit cast(int64_t frame, double px, double py) const {
    const auto& cam = paths.cams[static_cast<size_t>(frame)];
    const auto& K = spec.intrinsics;
    const std::array<double, 3> d_cam{(px - K.cx) / K.fx, (py - K.cy) / K.fy,
                                      1.0};
    const auto dw = mat_vec(cam.R, d_cam);
    Hit best;
    if (dw[1] > 1e-9) {  // ground plane y = ground_y
      const double t = (spec.ground_y - cam.p[1]) / dw[1];
      if (t > 1e-6 && t < best.t) {
        best.t = t;
        best.surface = kGround;
      }
    }
    if (dw[2] > 1e-9) {  // far wall z = wall_z
      const double t = (spec.wall_z - cam.p[2]) / dw[2];
      if (t > 1e-6 && t < best.t) {
        best.t = t;
        best.surface = kWall;
      }
    }
    for (size_t k = 0; k < spec.objects.size(); ++k) {
      const auto& c = paths.centers[k][static_cast<size_t>(frame)];
      if (std::abs(dw[2]) < 1e-9) continue;
      const double t = (c[2] - cam.p[2]) / dw[2];
      if (t <= 1e-6 || t >= best.t) continue;
      const double x = cam.p[0] + t * dw[0];
      const double y = cam.p[1] + t * dw[1];
      if (std::abs(x - c[0]) <= spec.objects[k].width / 2 &&
          std::abs(y - c[1]) <= spec.objects[k].height / 2) {
        best.t = t;
        best.surface = kSprite0 + static_cast<int>(k);
      }
    }
    if (best.surface < 0)
      throw NumericError("scene generation: ray escapes the scene (yaw too "
                         "large for the closed world)");
    for (int i = 0; i < 3; ++i) best.world[i] = cam.p[i] + best.t * dw[i];
    return best;
  }
};

float quantize8(double v) {
  const double q = std::round(std::min(1.0, std::max(0.0, v)) * 255.0) / 255.0;
  return static_cast<float>(q);
}

}  // namespace

SequenceBatch generate(const SceneSpec& spec) {
  spec.validate();
  const auto paths = build_paths(spec);
  check_frustum(spec, paths);

  const int64_t T = spec.frames, H = spec.height, W = spec.width;
  const int64_t HW = H * W;
  const auto& K = spec.intrinsics;
  Caster caster{spec, paths};

  // Surface appearance.
  Rng tex_rng(mix_seed(spec.seed, 0x7e47));
  const double tf = spec.texture_frequency;
  TrigTexture ground_tex =
      TrigTexture::make(tex_rng, 0.25 * tf, 0.5 * tf, 0.04 * tf, 0.08 * tf);
  TrigTexture wall_tex =
      TrigTexture::make(tex_rng, 0.2 * tf, 0.4 * tf, 0.2 * tf, 0.4 * tf);
  std::vector<TrigTexture> sprite_tex;
  for (const auto& obj : spec.objects) {
    Rng r(mix_seed(spec.seed, 0xa99, obj.appearance_seed));
    sprite_tex.push_back(
        TrigTexture::make(r, 0.6 * tf, 1.25 * tf, 0.6 * tf, 1.25 * tf));
  }

  auto color_at = [&](const Hit& hit, int64_t frame) -> std::array<double, 3> {
    switch (hit.surface) {
      case kGround:
        return ground_tex.eval(hit.world[0], hit.world[2]);
      case kWall:
        return wall_tex.eval(hit.world[0], hit.world[1]);
      default: {
        const size_t k = static_cast<size_t>(hit.surface - kSprite0);
        const auto& c = paths.centers[k][static_cast<size_t>(frame)];
        return sprite_tex[k].eval(hit.world[0] - c[0], hit.world[1] - c[1]);
      }
    }
  };

  SequenceBatch out;
  out.T = T;
  out.H = H;
  out.W = W;
  out.intrinsics = K;
  out.spec = spec;
  out.frames.assign(static_cast<size_t>(T * 3 * HW), 0.f);
  out.depths.assign(static_cast<size_t>(T * HW), 0.f);
  out.fg_masks.assign(static_cast<size_t>(T * HW), 0.f);
  out.flow_total.assign(static_cast<size_t>((T - 1) * 2 * HW), 0.f);
  out.flow_residual.assign(static_cast<size_t>((T - 1) * 2 * HW), 0.f);
  out.valid_masks.assign(static_cast<size_t>((T - 1) * HW), 0.f);

  std::vector<int> surface(static_cast<size_t>(T * HW));
  std::vector<std::array<double, 3>> world_pts(static_cast<size_t>(T * HW));

  for (int64_t t = 0; t < T; ++t) {
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int64_t i = t * HW + y * W + x;
        const Hit hit = caster.cast(t, static_cast<double>(x),
                                    static_cast<double>(y));
        surface[static_cast<size_t>(i)] = hit.surface;
        world_pts[static_cast<size_t>(i)] = hit.world;
        out.depths[static_cast<size_t>(i)] = static_cast<float>(hit.t);
        out.fg_masks[static_cast<size_t>(i)] =
            hit.surface >= kSprite0 ? 1.f : 0.f;
        const auto rgb = color_at(hit, t);
        for (int c = 0; c < 3; ++c)
          out.frames[static_cast<size_t>((t * 3 + c) * HW + y * W + x)] =
              quantize8(rgb[c]);
      }
  }

  // Relative pose p_{t:t+1}: maps frame-t camera coordinates into frame-t+1
  // camera coordinates. The warp applies its inverse.
  for (int64_t t = 0; t + 1 < T; ++t) {
    const auto& a = paths.cams[static_cast<size_t>(t)];      // source
    const auto& b = paths.cams[static_cast<size_t>(t + 1)];  // target
    std::array<double, 9> R{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int m = 0; m < 3; ++m)
          R[static_cast<size_t>(i * 3 + j)] +=
              b.R[static_cast<size_t>(m * 3 + i)] *
              a.R[static_cast<size_t>(m * 3 + j)];
    geom::Pose pose;
    pose.rotation = geom::detail::axis_angle_from_matrix(R);
    const std::array<double, 3> dp{a.p[0] - b.p[0], a.p[1] - b.p[1],
                                   a.p[2] - b.p[2]};
    pose.translation = mat_t_vec(b.R, dp);
    out.poses.push_back(pose);
  }

  // Flows toward each target frame t: background flow is exactly the ego
  // flow of the ground-truth depth and pose; sprite pixels override the
  // total, and the residual is defined as total - ego so the decomposition
  // is exact by construction.
  const double margin = 1.0;
  auto in_margin = [&](double u, double v) {
    return u >= margin && u <= static_cast<double>(W - 1) - margin &&
           v >= margin && v <= static_cast<double>(H - 1) - margin;
  };

  for (int64_t t = 1; t < T; ++t) {
    auto depth_t = out.depth_tensor(t);
    auto pose_t = geom::pose_to_tensor<float>(out.poses[static_cast<size_t>(t - 1)]);
    diff::NoGradGuard ng;
    auto ego = geom::ego_flow(depth_t, pose_t, K);
    const float* ego_v = ego.data();
    float* res_v = out.flow_residual.data() + (t - 1) * 2 * HW;
    float* tot_v = out.flow_total.data() + (t - 1) * 2 * HW;
    const auto& src_cam = paths.cams[static_cast<size_t>(t - 1)];

    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int64_t i = y * W + x;
        const int surf = surface[static_cast<size_t>(t * HW + i)];
        if (surf >= kSprite0) {
          const size_t k = static_cast<size_t>(surf - kSprite0);
          const auto& ck = paths.centers[k];
          const std::array<double, 3> veff{
              ck[static_cast<size_t>(t)][0] - ck[static_cast<size_t>(t - 1)][0],
              ck[static_cast<size_t>(t)][1] - ck[static_cast<size_t>(t - 1)][1],
              ck[static_cast<size_t>(t)][2] - ck[static_cast<size_t>(t - 1)][2]};
          const auto& P = world_pts[static_cast<size_t>(t * HW + i)];
          const auto uvz = project_world(
              src_cam, K, {P[0] - veff[0], P[1] - veff[1], P[2] - veff[2]});
          if (uvz[2] > 1e-6) {
            const float tx = static_cast<float>(uvz[0] - static_cast<double>(x));
            const float ty = static_cast<float>(uvz[1] - static_cast<double>(y));
            res_v[i] = tx - ego_v[i];
            res_v[HW + i] = ty - ego_v[HW + i];
          }
        }
        tot_v[i] = ego_v[i] + res_v[i];
        tot_v[HW + i] = ego_v[HW + i] + res_v[HW + i];
      }

    // Validity mask for the reconstruction oracle: a pixel participates only
    // if every bilinear tap of the composed warp reads the same surface it
    // should, with a one-pixel border margin. Disocclusions fail the
    // same-surface test.
    auto rigid_source_pos = [&](double px, double py,
                                int target_surf) -> std::array<double, 3> {
      // Where the as-if-static scene point seen at (px, py) in frame t
      // projects in frame t-1. For fractional pixels, intersect with the
      // same surface class.
      Hit h = caster.cast(t, px, py);
      if (h.surface != target_surf) return {0, 0, -1};
      return project_world(src_cam, K, h.world);
    };

    float* valid_v = out.valid_masks.data() + (t - 1) * HW;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int64_t i = y * W + x;
        const int surf = surface[static_cast<size_t>(t * HW + i)];
        bool ok = true;
        if (surf < kSprite0) {
          const auto uvz = project_world(
              src_cam, K, world_pts[static_cast<size_t>(t * HW + i)]);
          ok = uvz[2] > 1e-6 && in_margin(uvz[0], uvz[1]);
          if (ok) {
            const int64_t x0 = static_cast<int64_t>(std::floor(uvz[0]));
            const int64_t y0 = static_cast<int64_t>(std::floor(uvz[1]));
            for (int64_t dy = 0; dy <= 1 && ok; ++dy)
              for (int64_t dx = 0; dx <= 1 && ok; ++dx)
                ok = surface[static_cast<size_t>((t - 1) * HW + (y0 + dy) * W +
                                                 x0 + dx)] == surf;
          }
        } else {
          const double wx = static_cast<double>(x) + res_v[i];
          const double wy = static_cast<double>(y) + res_v[HW + i];
          ok = in_margin(wx, wy);
          if (ok) {
            const int64_t x0 = static_cast<int64_t>(std::floor(wx));
            const int64_t y0 = static_cast<int64_t>(std::floor(wy));
            for (int64_t dy = 0; dy <= 1 && ok; ++dy)
              for (int64_t dx = 0; dx <= 1 && ok; ++dx) {
                const int64_t wi = (y0 + dy) * W + x0 + dx;
                ok = surface[static_cast<size_t>(t * HW + wi)] == surf;
                if (!ok) break;
                const auto q = rigid_source_pos(
                    static_cast<double>(x0 + dx), static_cast<double>(y0 + dy),
                    surf);
                ok = q[2] > 1e-6 && in_margin(q[0], q[1]);
                if (!ok) break;
                const int64_t qx = static_cast<int64_t>(std::floor(q[0]));
                const int64_t qy = static_cast<int64_t>(std::floor(q[1]));
                for (int64_t ey = 0; ey <= 1 && ok; ++ey)
                  for (int64_t ex = 0; ex <= 1 && ok; ++ex)
                    ok = surface[static_cast<size_t>(
                             (t - 1) * HW + (qy + ey) * W + qx + ex)] == surf;
              }
          }
        }
        valid_v[i] = ok ? 1.f : 0.f;
      }
  }

  // Flow bound from the spec invariant.
  float max_abs = 0;
  for (float v : out.flow_total) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs >= static_cast<float>(spec.max_flow))
    throw NumericError("scene generation: flow magnitude " +
                       std::to_string(max_abs) + " exceeds max_flow " +
                       std::to_string(spec.max_flow));
  return out;
}

// ---------------------------------------------------------------------------

diff::TensorT<float> SequenceBatch::frame_tensor(int64_t t) const {
  std::vector<float> v(frames.begin() + t * frame_elems(),
                       frames.begin() + (t + 1) * frame_elems());
  return diff::TensorT<float>::from_vec({1, 3, H, W}, std::move(v));
}

diff::TensorT<float> SequenceBatch::depth_tensor(int64_t t) const {
  std::vector<float> v(depths.begin() + t * plane_elems(),
                       depths.begin() + (t + 1) * plane_elems());
  return diff::TensorT<float>::from_vec({1, 1, H, W}, std::move(v));
}

diff::TensorT<float> SequenceBatch::fg_tensor(int64_t t) const {
  std::vector<float> v(fg_masks.begin() + t * plane_elems(),
                       fg_masks.begin() + (t + 1) * plane_elems());
  return diff::TensorT<float>::from_vec({1, 1, H, W}, std::move(v));
}

diff::TensorT<float> SequenceBatch::residual_flow_tensor(int64_t t) const {
  std::vector<float> v(flow_residual.begin() + (t - 1) * 2 * plane_elems(),
                       flow_residual.begin() + t * 2 * plane_elems());
  return diff::TensorT<float>::from_vec({1, 2, H, W}, std::move(v));
}

diff::TensorT<float> SequenceBatch::total_flow_tensor(int64_t t) const {
  std::vector<float> v(flow_total.begin() + (t - 1) * 2 * plane_elems(),
                       flow_total.begin() + t * 2 * plane_elems());
  return diff::TensorT<float>::from_vec({1, 2, H, W}, std::move(v));
}

diff::TensorT<float> SequenceBatch::valid_tensor(int64_t t) const {
  std::vector<float> v(valid_masks.begin() + (t - 1) * plane_elems(),
                       valid_masks.begin() + t * plane_elems());
  return diff::TensorT<float>::from_vec({1, 1, H, W}, std::move(v));
}

// ---------------------------------------------------------------------------
// Scene families

SceneSpec sample_scene_spec(uint64_t seed, const SceneFamily& family) {
  for (int attempt = 0; attempt < 256; ++attempt) {
    Rng rng(mix_seed(seed, 0x5cefa, static_cast<uint64_t>(attempt)));
    SceneSpec spec;
    spec.seed = mix_seed(seed, 0x5eed);
    spec.frames = family.frames;
    spec.height = family.height;
    spec.width = family.width;
    spec.texture_frequency = family.texture_frequency;
    spec.intrinsics = geom::Intrinsics{
        0.75 * static_cast<double>(family.width),
        0.75 * static_cast<double>(family.width),
        (static_cast<double>(family.width) - 1) / 2.0,
        (static_cast<double>(family.height) - 1) / 2.0};
    const double pick = rng.uniform();
    if (family.allow_turns && pick < 0.3) {
      spec.trajectory = Trajectory::kTurn;
      spec.yaw_rate = rng.uniform(0.004, 0.012) * (rng.uniform() < 0.5 ? -1 : 1);
    } else if (family.allow_stop_and_go && pick < 0.55) {
      spec.trajectory = Trajectory::kStopAndGo;
    } else {
      spec.trajectory = Trajectory::kStraight;
    }
    spec.forward_speed = rng.uniform(0.12, 0.28);
    spec.lateral_speed = rng.uniform(-0.03, 0.03);

    const int64_t n_obj = rng.uniform_int(family.min_objects,
                                          family.max_objects);
    const double total_forward =
        spec.forward_speed * static_cast<double>(family.frames);
    for (int64_t k = 0; k < n_obj; ++k) {
      ObjectSpec obj;
      obj.width = rng.uniform(1.2, 2.2);
      obj.height = rng.uniform(0.9, 1.6);
      const double z0 = rng.uniform(5.5, 10.0);
      const double z_end = z0 - total_forward;
      const double half_w =
          0.55 * std::min(z0, z_end) *
          (static_cast<double>(family.width) / 2.0) / spec.intrinsics.fx;
      obj.center = {rng.uniform(-half_w, half_w), rng.uniform(0.0, 0.6), z0};
      obj.velocity = {rng.uniform(0.08, 0.2) * (rng.uniform() < 0.5 ? -1 : 1),
                      rng.uniform(-0.04, 0.04), 0.0};
      obj.velocity_jitter = family.velocity_jitter;
      obj.appearance_seed = mix_seed(seed, 0xa5a5, static_cast<uint64_t>(k));
      spec.objects.push_back(obj);
    }
    try {
      check_frustum(spec, build_paths(spec));
      return spec;
    } catch (const NumericError&) {
      continue;  // resample
    }
  }
  throw ConfigError("sample_scene_spec: no in-frustum placement found");
}

// ---------------------------------------------------------------------------
// JSON round trip for scene specs

json scene_spec_to_json(const SceneSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["frames"] = spec.frames;
  j["height"] = spec.height;
  j["width"] = spec.width;
  j["intrinsics"] = {{"fx", spec.intrinsics.fx},
                     {"fy", spec.intrinsics.fy},
                     {"cx", spec.intrinsics.cx},
                     {"cy", spec.intrinsics.cy}};
  j["trajectory"] = trajectory_name(spec.trajectory);
  j["texture_frequency"] = spec.texture_frequency;
  j["forward_speed"] = spec.forward_speed;
  j["lateral_speed"] = spec.lateral_speed;
  j["yaw_rate"] = spec.yaw_rate;
  j["ground_y"] = spec.ground_y;
  j["wall_z"] = spec.wall_z;
  j["max_flow"] = spec.max_flow;
  j["objects"] = json::array();
  for (const auto& o : spec.objects)
    j["objects"].push_back({{"width", o.width},
                            {"height", o.height},
                            {"center", o.center},
                            {"velocity", o.velocity},
                            {"velocity_jitter", o.velocity_jitter},
                            {"appearance_seed", o.appearance_seed}});
  return j;
}

SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec spec;
  try {
    spec.seed = j.value("seed", uint64_t(0));
    spec.frames = j.value("frames", int64_t(16));
    spec.height = j.value("height", int64_t(32));
    spec.width = j.value("width", int64_t(64));
    if (j.contains("intrinsics")) {
      const auto& ji = j.at("intrinsics");
      spec.intrinsics = {ji.at("fx"), ji.at("fy"), ji.at("cx"), ji.at("cy")};
    } else {
      spec.intrinsics = geom::Intrinsics{
          0.75 * static_cast<double>(spec.width),
          0.75 * static_cast<double>(spec.width),
          (static_cast<double>(spec.width) - 1) / 2.0,
          (static_cast<double>(spec.height) - 1) / 2.0};
    }
    spec.trajectory =
        trajectory_from_name(j.value("trajectory", std::string("straight")));
    spec.texture_frequency = j.value("texture_frequency", 1.0);
    spec.forward_speed = j.value("forward_speed", 0.2);
    spec.lateral_speed = j.value("lateral_speed", 0.0);
    spec.yaw_rate = j.value("yaw_rate", 0.0);
    spec.ground_y = j.value("ground_y", 1.5);
    spec.wall_z = j.value("wall_z", 18.0);
    spec.max_flow = j.value("max_flow", 16.0);
    for (const auto& jo : j.value("objects", json::array())) {
      ObjectSpec o;
      o.width = jo.value("width", 1.6);
      o.height = jo.value("height", 1.2);
      if (jo.contains("center")) o.center = jo.at("center");
      if (jo.contains("velocity")) o.velocity = jo.at("velocity");
      o.velocity_jitter = jo.value("velocity_jitter", 0.0);
      o.appearance_seed = jo.value("appearance_seed", uint64_t(0));
      spec.objects.push_back(o);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene spec parse error: ") + e.what());
  }
  return spec;
}

// ---------------------------------------------------------------------------
// On-disk format

void write_ppm(const std::string& path, const float* rgb_chw, int64_t H,
               int64_t W) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(W * 3));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = rgb_chw[(c * H + y) * W + x];
        row[static_cast<size_t>(x * 3 + c)] = static_cast<unsigned char>(
            std::lround(std::min(1.f, std::max(0.f, v)) * 255.f));
      }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
}

std::vector<float> read_ppm(const std::string& path, int64_t& H, int64_t& W) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read '" + path + "'");
  std::string magic;
  is >> magic;
  if (magic != "P6") throw FormatError("'" + path + "': not a P6 PPM");
  int64_t maxval = 0;
  is >> W >> H >> maxval;
  if (maxval != 255) throw FormatError("'" + path + "': unsupported maxval");
  is.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<size_t>(H * W * 3));
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (!is) throw FormatError("'" + path + "': truncated pixel data");
  std::vector<float> out(static_cast<size_t>(3 * H * W));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        out[static_cast<size_t>((c * H + y) * W + x)] =
            static_cast<float>(raw[static_cast<size_t>((y * W + x) * 3 + c)]) /
            255.f;
  return out;
}

namespace {

void write_f32(const std::string& path, const float* data, int64_t n) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path + "'");
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * 4));
}

void read_f32(const std::string& path, float* data, int64_t n) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("missing data file '" + path + "'");
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
  if (is.gcount() != static_cast<std::streamsize>(n * 4))
    throw FormatError("truncated data file '" + path + "'");
}

std::string idx(const char* stem, int64_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03lld", stem,
                static_cast<long long>(i));
  return buf;
}

}  // namespace

void write_sequence(const SequenceBatch& b, const std::string& dir) {
  fs::create_directories(dir);
  json man;
  man["format"] = kDatasetFormat;
  man["frames"] = b.T;
  man["height"] = b.H;
  man["width"] = b.W;
  man["intrinsics"] = {{"fx", b.intrinsics.fx},
                       {"fy", b.intrinsics.fy},
                       {"cx", b.intrinsics.cx},
                       {"cy", b.intrinsics.cy}};
  json poses = json::array();
  for (const auto& p : b.poses) poses.push_back(p.as_array());
  man["poses"] = std::move(poses);
  man["scene"] = scene_spec_to_json(b.spec);
  {
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw IoError("cannot write manifest in '" + dir + "'");
    os << man.dump(2) << "\n";
  }
  for (int64_t t = 0; t < b.T; ++t) {
    write_ppm(dir + "/" + idx("frame", t) + ".ppm",
              b.frames.data() + t * b.frame_elems(), b.H, b.W);
    write_f32(dir + "/" + idx("depth", t) + ".f32",
              b.depths.data() + t * b.plane_elems(), b.plane_elems());
    write_f32(dir + "/" + idx("fg", t) + ".f32",
              b.fg_masks.data() + t * b.plane_elems(), b.plane_elems());
  }
  for (int64_t t = 1; t < b.T; ++t) {
    write_f32(dir + "/" + idx("flow_total", t) + ".f32",
              b.flow_total.data() + (t - 1) * 2 * b.plane_elems(),
              2 * b.plane_elems());
    write_f32(dir + "/" + idx("flow_residual", t) + ".f32",
              b.flow_residual.data() + (t - 1) * 2 * b.plane_elems(),
              2 * b.plane_elems());
    write_f32(dir + "/" + idx("valid", t) + ".f32",
              b.valid_masks.data() + (t - 1) * b.plane_elems(),
              b.plane_elems());
  }
}

SequenceBatch read_sequence(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IoError("missing manifest in '" + dir + "'");
  json man = json::parse(is, nullptr, false);
  if (man.is_discarded())
    throw FormatError("unparsable manifest in '" + dir + "'");
  if (man.value("format", "") != kDatasetFormat)
    throw FormatError("'" + dir + "': format tag '" +
                      man.value("format", "<missing>") + "' != " +
                      kDatasetFormat);
  SequenceBatch b;
  b.T = man.at("frames");
  b.H = man.at("height");
  b.W = man.at("width");
  const auto& ji = man.at("intrinsics");
  b.intrinsics = {ji.at("fx"), ji.at("fy"), ji.at("cx"), ji.at("cy")};
  if (man.contains("scene")) b.spec = scene_spec_from_json(man["scene"]);
  for (const auto& jp : man.at("poses")) {
    geom::Pose p;
    for (int i = 0; i < 3; ++i) {
      p.rotation[static_cast<size_t>(i)] = jp.at(static_cast<size_t>(i));
      p.translation[static_cast<size_t>(i)] = jp.at(static_cast<size_t>(i + 3));
    }
    b.poses.push_back(p);
  }
  if (static_cast<int64_t>(b.poses.size()) != b.T - 1)
    throw FormatError("'" + dir + "': pose count " +
                      std::to_string(b.poses.size()) + " != frames-1");

  b.frames.resize(static_cast<size_t>(b.T * 3 * b.H * b.W));
  b.depths.resize(static_cast<size_t>(b.T * b.H * b.W));
  b.fg_masks.resize(static_cast<size_t>(b.T * b.H * b.W));
  b.flow_total.resize(static_cast<size_t>((b.T - 1) * 2 * b.H * b.W));
  b.flow_residual.resize(static_cast<size_t>((b.T - 1) * 2 * b.H * b.W));
  b.valid_masks.resize(static_cast<size_t>((b.T - 1) * b.H * b.W));

  for (int64_t t = 0; t < b.T; ++t) {
    int64_t H = 0, W = 0;
    auto rgb = read_ppm(dir + "/" + idx("frame", t) + ".ppm", H, W);
    if (H != b.H || W != b.W)
      throw FormatError("'" + dir + "': frame " + std::to_string(t) +
                        " resolution mismatch");
    std::copy(rgb.begin(), rgb.end(), b.frames.begin() + t * b.frame_elems());
    read_f32(dir + "/" + idx("depth", t) + ".f32",
             b.depths.data() + t * b.plane_elems(), b.plane_elems());
    read_f32(dir + "/" + idx("fg", t) + ".f32",
             b.fg_masks.data() + t * b.plane_elems(), b.plane_elems());
  }
  for (int64_t t = 1; t < b.T; ++t) {
    read_f32(dir + "/" + idx("flow_total", t) + ".f32",
             b.flow_total.data() + (t - 1) * 2 * b.plane_elems(),
             2 * b.plane_elems());
    read_f32(dir + "/" + idx("flow_residual", t) + ".f32",
             b.flow_residual.data() + (t - 1) * 2 * b.plane_elems(),
             2 * b.plane_elems());
    read_f32(dir + "/" + idx("valid", t) + ".f32",
             b.valid_masks.data() + (t - 1) * b.plane_elems(),
             b.plane_elems());
  }
  return b;
}

void write_dataset(const std::vector<SequenceBatch>& batches,
                   const std::string& root) {
  fs::create_directories(root);
  json index;
  index["format"] = kDatasetFormat;
  json seqs = json::array();
  for (size_t i = 0; i < batches.size(); ++i) {
    const std::string name = idx("seq", static_cast<int64_t>(i));
    write_sequence(batches[i], root + "/" + name);
    seqs.push_back(name);
  }
  index["sequences"] = std::move(seqs);
  std::ofstream os(root + "/index.json");
  if (!os) throw IoError("cannot write index in '" + root + "'");
  os << index.dump(2) << "\n";
}

std::vector<SequenceBatch> read_dataset(const std::string& root) {
  std::ifstream is(root + "/index.json");
  if (!is) throw IoError("missing index.json in '" + root + "'");
  json index = json::parse(is, nullptr, false);
  if (index.is_discarded())
    throw FormatError("unparsable index.json in '" + root + "'");
  if (index.value("format", "") != kDatasetFormat)
    throw FormatError("'" + root + "': unsupported dataset format");
  std::vector<SequenceBatch> out;
  for (const auto& name : index.at("sequences"))
    out.push_back(read_sequence(root + "/" + name.get<std::string>()));
  return out;
}

}  // namespace smvp::synth
