#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgs/camera.hpp"
#include "dgs/image.hpp"
#include "dgs/rng.hpp"
#include "dgs/scene.hpp"
#include "dgs/types.hpp"

namespace dgs {

// Knobs of a generated test scene. Amplitudes are fractions of `extent`
// except rotations, which are radians.
struct SceneSpec {
  int n_splats = 500;
  int n_clusters = 4;
  double extent = 1.0;
  int n_freeze_frames = 24;
  int n_reference_frames = 16;
  int width = 96;
  int height = 64;
  double jitter = 0.0;             // per-frame rigid inconsistency amplitude
  double splat_scale = 0.04;       // median splat extent; smaller = sharper scene
  double init_noise = 0.01;        // noise on the init point cloud
  double motion_translation = 0.1; // cluster travel by t = 1
  double motion_rotation = 0.3;    // cluster rotation by t = 1, radians
  double camera_distance = 3.0;    // arc radius, multiples of extent
  double arc_degrees = 120.0;
  int canonical_index = 0;
};

// Rigid trajectory of one cluster about its centroid, identity at t = 0.
struct ClusterMotion {
  Vec3 centroid = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double rate = 0.0;            // radians of rotation at t = 1
  Vec3 velocity = Vec3::Zero(); // translation at t = 1
};

struct RigidTransform {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();  // x' = r * x + t
};

// Fully scripted ground truth: canonical splats, rigid cluster motion over
// t in [0,1], a freeze-time camera arc that starts at the reference pose,
// and bounded per-frame jitter that is exactly zero at the canonical frame.
struct SyntheticScene {
  SceneSpec spec;
  std::uint64_t seed = 0;
  GaussianCloud cloud;  // canonical ground truth
  VecXi cluster_of;     // N
  std::vector<ClusterMotion> motion;
  std::vector<Camera> freeze_cameras;
  Camera reference_camera;
  std::vector<double> reference_times;  // t[0] = 0
  std::uint64_t jitter_seed = 0;
};

SyntheticScene gen_scene(const SceneSpec& spec, std::uint64_t seed);

// Ground truth at time t: positions and rotations follow the cluster motion,
// everything else stays canonical.
GaussianCloud cloud_at_time(const SyntheticScene& s, double t);

// Offsets such that apply_offsets(s.cloud, gt_offsets(s, t)) matches
// cloud_at_time(s, t) (closure property, exercised by tests).
DeformationOffsets gt_offsets(const SyntheticScene& s, double t);

// The frame's per-cluster rigid inconsistency (identity at the canonical
// frame). World-frame form: x' = r * x + t.
std::vector<RigidTransform> jitter_transforms(const SyntheticScene& s, int frame);
GaussianCloud jittered_cloud(const SyntheticScene& s, int frame);

// Everything a training run consumes. `spec` and `seed` allow exact
// regeneration of the generating scene.
struct TrainingData {
  std::vector<Image> freeze_frames;  // jittered targets
  std::vector<Image> freeze_clean;   // consistent renders for evaluation
  std::vector<Camera> freeze_cameras;
  int canonical_index = 0;
  std::vector<Image> reference_frames;
  std::vector<double> reference_times;
  Camera reference_camera;
  MatX init_positions;  // P x 3, noisy stand-in for an SfM point cloud
  MatX init_colors;     // P x 3
  Vec3 background = Vec3::Zero();
  bool consistent = true;  // jitter amplitude was zero
  SceneSpec spec;
  std::uint64_t seed = 0;
};

TrainingData render_dataset(const SyntheticScene& s);

// Directory layout: manifest.json, freeze_cameras.txt, reference_camera.txt,
// init_points.txt, freeze/frame_###.png, freeze/clean_###.png,
// reference/frame_###.png. PNG quantizes frames to 8 bits.
void save_dataset(const TrainingData& data, const std::string& dir);
TrainingData load_dataset(const std::string& dir);

// Central differences per coordinate. Throws on non-finite function values.
VecX finite_diff(const std::function<double(const VecX&)>& f, const VecX& params, double eps);

}  // namespace dgs
