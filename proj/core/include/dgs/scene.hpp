#pragma once

#include <string>

#include "dgs/geometry.hpp"
#include "dgs/types.hpp"

namespace dgs {

// Canonical splat cloud. Scales live in log domain, opacities in logit domain
// so the optimizer is unconstrained; activations happen at use sites.
struct GaussianCloud {
  MatX positions;       // N x 3, world units
  MatX raw_rotations;   // N x 4, (w,x,y,z), unnormalized
  MatX log_scales;      // N x 3
  VecX opacity_logits;  // N
  MatX colors;          // N x 3, clamped to [0,1] at render time

  int size() const { return static_cast<int>(positions.rows()); }
  void validate() const;  // throws on shape mismatch or N < 1

  Quat rotation(int i) const {
    return {raw_rotations(i, 0), raw_rotations(i, 1), raw_rotations(i, 2), raw_rotations(i, 3)};
  }
  Vec3 scale(int i) const { return log_scales.row(i).array().exp().matrix().transpose(); }
  double opacity(int i) const { return 1.0 / (1.0 + std::exp(-opacity_logits[i])); }

  static GaussianCloud empty(int n);
};

struct DeformationOffsets {
  MatX dx;  // N x 3
  MatX dq;  // N x 4, additive in raw quaternion domain
  MatX ds;  // N x 3, additive in log-scale domain

  int size() const { return static_cast<int>(dx.rows()); }
  static DeformationOffsets zeros(int n);
  bool all_zero() const;
};

// Sigma = R diag(s)^2 R^T. Throws on non-positive scale or zero-norm q.
Mat3 covariance(const Quat& q, const Vec3& s);

// x+dx, q+dq, log_s+ds; opacity and color pass through untouched.
GaussianCloud apply_offsets(const GaussianCloud& cloud, const DeformationOffsets& off);

// Binary little-endian PLY with per-vertex fields
// x,y,z, rot_0..rot_3, scale_0..2 (log domain), opacity (logit domain),
// f_dc_0..2 (SH DC convention: f_dc = (color - 0.5) / 0.28209479177387814).
void export_ply(const GaussianCloud& cloud, const std::string& path);
GaussianCloud import_ply(const std::string& path);

// Rounds every parameter through float32. The PLY container stores float32,
// so a quantized cloud round-trips bit-exactly.
GaussianCloud quantize_to_float(const GaussianCloud& cloud);

}  // namespace dgs
