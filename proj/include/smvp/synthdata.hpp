#pragma once

#include <optional>

#include <json.hpp>

#include "smvp/geometry.hpp"

namespace smvp::synth {

/// Procedurally generated driving-like scenes: a textured ground plane and
/// far wall observed by a moving camera, plus independently moving textured
/// sprites. Every ground-truth channel is exact by construction.
///
/// Flow convention (shared with the geometry module): flows are sampling
/// displacements on target pixels. The content at target pixel u originated
/// at u + flow(u) in the previous frame, so a sprite moving right by one
/// pixel per frame carries residual flow (-1, 0) on its footprint.

enum class Trajectory { kStraight, kTurn, kStopAndGo };

inline std::string trajectory_name(Trajectory t) {
  switch (t) {
    case Trajectory::kStraight: return "straight";
    case Trajectory::kTurn: return "turn";
    case Trajectory::kStopAndGo: return "stop_and_go";
  }
  return "?";
}

inline Trajectory trajectory_from_name(const std::string& s) {
  if (s == "straight") return Trajectory::kStraight;
  if (s == "turn") return Trajectory::kTurn;
  if (s == "stop_and_go") return Trajectory::kStopAndGo;
  throw ConfigError("unknown trajectory '" + s + "'");
}

/// A world-z-aligned textured billboard with constant (optionally jittered)
/// velocity in scene units per frame.
struct ObjectSpec {
  double width = 1.6;
  double height = 1.2;
  std::array<double, 3> center{0.0, 0.5, 7.0};  // world position at t = 0
  std::array<double, 3> velocity{0.0, 0.0, 0.0};
  double velocity_jitter = 0.0;  // std of the per-frame velocity random walk
  uint64_t appearance_seed = 0;
};

struct SceneSpec {
  uint64_t seed = 0;
  int64_t frames = 16;
  int64_t height = 32;
  int64_t width = 64;
  geom::Intrinsics intrinsics{48.0, 48.0, 31.5, 15.5};
  Trajectory trajectory = Trajectory::kStraight;
  double texture_frequency = 1.0;
  double forward_speed = 0.2;  // units/frame along the heading
  double lateral_speed = 0.0;
  double yaw_rate = 0.0;  // radians/frame, used by the turn family
  double ground_y = 1.5;  // camera height above the ground plane
  double wall_z = 18.0;   // world z of the fronto-parallel far wall
  double max_flow = 16.0;
  std::vector<ObjectSpec> objects;

  void validate() const;
};

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

/// One generated sequence with exact ground truth. Frames are quantized to
/// 8-bit levels at generation time so the on-disk round trip is lossless.
struct SequenceBatch {
  int64_t T = 0, H = 0, W = 0;
  geom::Intrinsics intrinsics;
  std::vector<float> frames;         // [T,3,H,W] in {k/255}
  std::vector<float> depths;         // [T,1,H,W], camera z-depth
  std::vector<geom::Pose> poses;     // T-1 entries, maps cam t -> cam t+1 coords
  std::vector<float> flow_total;     // [T-1,2,H,W], target index t = i+1
  std::vector<float> flow_residual;  // [T-1,2,H,W]
  std::vector<float> fg_masks;       // [T,1,H,W], binary
  std::vector<float> valid_masks;    // [T-1,1,H,W], reconstruction validity
  SceneSpec spec;

  int64_t frame_elems() const { return 3 * H * W; }
  int64_t plane_elems() const { return H * W; }

  diff::TensorT<float> frame_tensor(int64_t t) const;
  diff::TensorT<float> depth_tensor(int64_t t) const;
  diff::TensorT<float> fg_tensor(int64_t t) const;
  /// Flow toward target frame t (t in [1, T-1]).
  diff::TensorT<float> residual_flow_tensor(int64_t t) const;
  diff::TensorT<float> total_flow_tensor(int64_t t) const;
  diff::TensorT<float> valid_tensor(int64_t t) const;
};

/// Renders the sequence described by the spec. Pure given the seed.
/// Throws NumericError if an object leaves the frustum (naming it) or the
/// induced flow exceeds max_flow.
SequenceBatch generate(const SceneSpec& spec);

/// Randomized scene specs from a family description; rejection-samples
/// object placements until the whole sequence stays in frustum.
struct SceneFamily {
  int64_t frames = 16;
  int64_t height = 32;
  int64_t width = 64;
  int64_t min_objects = 1;
  int64_t max_objects = 2;
  double velocity_jitter = 0.0;
  double texture_frequency = 1.0;
  bool allow_turns = true;
  bool allow_stop_and_go = true;
};

SceneSpec sample_scene_spec(uint64_t seed, const SceneFamily& family);

// ---------------------------------------------------------------------------
// On-disk dataset: one directory per sequence holding 8-bit PPM frames plus
// raw little-endian float32 planes, described by a JSON manifest. The root
// holds an index manifest. Format tag: "slamp3d-synth/v1".

inline constexpr const char* kDatasetFormat = "slamp3d-synth/v1";

void write_sequence(const SequenceBatch& batch, const std::string& dir);
SequenceBatch read_sequence(const std::string& dir);

void write_dataset(const std::vector<SequenceBatch>& batches,
                   const std::string& root);
std::vector<SequenceBatch> read_dataset(const std::string& root);

/// PPM helpers shared with the visualization code.
void write_ppm(const std::string& path, const float* rgb_chw, int64_t H,
               int64_t W);
std::vector<float> read_ppm(const std::string& path, int64_t& H, int64_t& W);

}  // namespace smvp::synth
