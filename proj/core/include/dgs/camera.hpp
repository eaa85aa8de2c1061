#pragma once

#include <string>
#include <vector>

#include "dgs/geometry.hpp"
#include "dgs/rng.hpp"
#include "dgs/types.hpp"

namespace dgs {

// World-to-camera convention: p_cam = R * p_world + t, camera looks down +z,
// +x right, +y down. Pinhole projection u = fx * x/z + cx, v = fy * y/z + cy.
struct Camera {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  Vec3 to_camera(const Vec3& p_world) const { return rotation * p_world + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 forward() const { return rotation.row(2).transpose(); }

  // Points behind the camera come back with depth <= 0; callers cull on depth.
  Vec2 project(const Vec3& p_world, double* depth = nullptr) const;

  Camera scaled(double factor) const;        // resizes image plane, same pose
  Camera resized(int w, int h) const;        // exact target size, same field of view
};

// Small pose correction optimized jointly with the scene:
// R' = exp(skew(axis_angle)) * R, t' = t + dt. Applied at render time.
struct PoseDelta {
  Vec3 axis_angle = Vec3::Zero();
  Vec3 dt = Vec3::Zero();
};

Camera apply_pose_delta(const Camera& cam, const PoseDelta& d);

// Look-at constructor: camera at `eye` aimed at `target`, `up` approximately up
// in world space (+y down in image). Throws if eye == target or up parallel.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy,
               int width, int height);

// Camera-center jitter for novel-view sampling: the center moves by a uniform
// sample from a disk of the given radius in the camera's local xy-plane, then
// the camera re-aims exactly at `target` (kept explicit because a pinhole pose
// does not store its look-at point).
Camera perturb_pose(const Camera& cam, const Vec3& target, double radius, RngStream& rng);

// M poses from p0 to p1 inclusive: translation lerped, rotation slerped,
// intrinsics copied from p0. Endpoints reproduce p0 / p1 bit-exactly.
// Throws if M < 2.
std::vector<Camera> interpolate_trajectory(const Camera& p0, const Camera& p1, int M);

// Text format, one camera per line:
//   frame qw qx qy qz tx ty tz fx fy cx cy width height
// '#' starts a comment. Rotation stored as the world-to-camera quaternion.
void save_cameras(const std::vector<Camera>& cams, const std::string& path);
std::vector<Camera> load_cameras(const std::string& path);

}  // namespace dgs
