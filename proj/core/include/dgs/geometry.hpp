#pragma once

#include <array>

#include "dgs/types.hpp"

namespace dgs {

// Hamilton quaternion, scalar-first (w,x,y,z).
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Quat() = default;
  Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }
  static Quat from_vec(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }

  Vec4 vec() const { return Vec4(w, x, y, z); }
  double norm() const;
  Quat normalized() const;  // throws on zero norm
  Quat conjugate() const { return {w, -x, -y, -z}; }
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
};

Quat quat_mul(const Quat& a, const Quat& b);
Quat quat_inverse(const Quat& q);  // throws "degenerate quaternion" on zero norm

// Rotation matrix of the normalized quaternion; scale-invariant in q.
Mat3 quat_to_rotmat(const Quat& q);

// dR/d(w,x,y,z) evaluated at a unit quaternion.
std::array<Mat3, 4> unit_quat_rotmat_jacobian(const Quat& unit_q);

// Pulls a gradient w.r.t. the normalized quaternion back to the raw one:
// d/dq_raw of (q_raw / |q_raw|) applied to d_unit.
Vec4 quat_normalize_backward(const Vec4& q_raw, const Vec4& d_unit);

// Contracts a rotation-matrix gradient through normalization down to the raw
// quaternion. Convenience wrapper over the two Jacobians above.
Vec4 rotmat_grad_to_raw_quat(const Quat& q_raw, const Mat3& d_rotmat);

Mat3 skew(const Vec3& v);
Mat3 axis_angle_to_rotmat(const Vec3& axis_angle);
Quat axis_angle_to_quat(const Vec3& axis_angle);
Quat rotmat_to_quat(const Mat3& r);

struct PosEncConfig {
  int num_frequencies = 0;  // L
  bool include_input = true;

  int output_dim(int input_dim) const {
    return input_dim * (2 * num_frequencies + (include_input ? 1 : 0));
  }
};

// Frequency encoding, per-coordinate contiguous blocks:
// [v_i, sin(2^0 pi v_i), cos(2^0 pi v_i), ..., sin(2^{L-1} pi v_i), cos(...)].
VecX posenc(const VecX& v, const PosEncConfig& cfg);
VecX posenc_backward(const VecX& v, const PosEncConfig& cfg, const VecX& d_out);

}  // namespace dgs
