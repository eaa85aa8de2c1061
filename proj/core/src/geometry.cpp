#include "dgs/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace dgs {

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
  const double n = norm();
  if (n <= 0.0) throw std::invalid_argument("degenerate quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quat quat_mul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quat quat_inverse(const Quat& q) {
  const double n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z;
  if (n2 <= 0.0) throw std::invalid_argument("degenerate quaternion");
  return {q.w / n2, -q.x / n2, -q.y / n2, -q.z / n2};
}

Mat3 quat_to_rotmat(const Quat& q) {
  const Quat u = q.normalized();
  const double w = u.w, x = u.x, y = u.y, z = u.z;
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

std::array<Mat3, 4> unit_quat_rotmat_jacobian(const Quat& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y,
      2 * z, 0, -2 * x,
      -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z,
      2 * y, -4 * x, -2 * w,
      2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w,
      2 * x, 0, 2 * z,
      -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x,
      2 * w, -4 * z, 2 * y,
      2 * x, 2 * y, 0;
  return {dw, dx, dy, dz};
}

Vec4 quat_normalize_backward(const Vec4& q_raw, const Vec4& d_unit) {
  const double n = q_raw.norm();
  if (n <= 0.0) throw std::invalid_argument("degenerate quaternion");
  const Vec4 u = q_raw / n;
  return (d_unit - u * u.dot(d_unit)) / n;
}

Vec4 rotmat_grad_to_raw_quat(const Quat& q_raw, const Mat3& d_rotmat) {
  const Quat u = q_raw.normalized();
  const auto jac = unit_quat_rotmat_jacobian(u);
  Vec4 d_unit;
  for (int i = 0; i < 4; ++i) d_unit[i] = (jac[i].array() * d_rotmat.array()).sum();
  return quat_normalize_backward(q_raw.vec(), d_unit);
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(),
      v.z(), 0, -v.x(),
      -v.y(), v.x(), 0;
  return m;
}

Mat3 axis_angle_to_rotmat(const Vec3& aa) {
  const double theta = aa.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(aa);
  const Vec3 axis = aa / theta;
  const Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

Quat axis_angle_to_quat(const Vec3& aa) {
  const double theta = aa.norm();
  if (theta < 1e-12) return Quat(1.0, 0.5 * aa.x(), 0.5 * aa.y(), 0.5 * aa.z()).normalized();
  const double half = 0.5 * theta;
  const double s = std::sin(half) / theta;
  return {std::cos(half), s * aa.x(), s * aa.y(), s * aa.z()};
}

Quat rotmat_to_quat(const Mat3& r) {
  // Shepperd's method, stable for every sign pattern of the trace.
  const double tr = r.trace();
  Quat q;
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (r(2, 1) - r(1, 2)) / s;
    q.y = (r(0, 2) - r(2, 0)) / s;
    q.z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q.w = (r(2, 1) - r(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (r(0, 1) + r(1, 0)) / s;
    q.z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q.w = (r(0, 2) - r(2, 0)) / s;
    q.x = (r(0, 1) + r(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (r(1, 2) + r(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q.w = (r(1, 0) - r(0, 1)) / s;
    q.x = (r(0, 2) + r(2, 0)) / s;
    q.y = (r(1, 2) + r(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.normalized();
}

VecX posenc(const VecX& v, const PosEncConfig& cfg) {
  const int d = static_cast<int>(v.size());
  const int block = 2 * cfg.num_frequencies + (cfg.include_input ? 1 : 0);
  VecX out(d * block);
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < d; ++i) {
    int o = i * block;
    if (cfg.include_input) out[o++] = v[i];
    double freq = pi;
    for (int l = 0; l < cfg.num_frequencies; ++l) {
      out[o++] = std::sin(freq * v[i]);
      out[o++] = std::cos(freq * v[i]);
      freq *= 2.0;
    }
  }
  return out;
}

VecX posenc_backward(const VecX& v, const PosEncConfig& cfg, const VecX& d_out) {
  const int d = static_cast<int>(v.size());
  const int block = 2 * cfg.num_frequencies + (cfg.include_input ? 1 : 0);
  VecX d_v = VecX::Zero(d);
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < d; ++i) {
    int o = i * block;
    if (cfg.include_input) d_v[i] += d_out[o++];
    double freq = pi;
    for (int l = 0; l < cfg.num_frequencies; ++l) {
      d_v[i] += d_out[o++] * freq * std::cos(freq * v[i]);
      d_v[i] -= d_out[o++] * freq * std::sin(freq * v[i]);
      freq *= 2.0;
    }
  }
  return d_v;
}

}  // namespace dgs
