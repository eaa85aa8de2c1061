#include "dgs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dgs/geometry.hpp"

namespace dgs {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

constexpr int kWin = 11;
constexpr int kHalf = 5;

const double* ssim_window() {
  static double w[kWin * kWin];
  static bool init = [] {
    const double sigma = 1.5;
    double total = 0.0;
    for (int dy = -kHalf; dy <= kHalf; ++dy) {
      for (int dx = -kHalf; dx <= kHalf; ++dx) {
        const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        w[(dy + kHalf) * kWin + (dx + kHalf)] = v;
        total += v;
      }
    }
    for (double& v : w) v /= total;
    return true;
  }();
  (void)init;
  return w;
}

using Mat4 = Eigen::Matrix4d;

Vec4 quat_vec(const Quat& q) { return {q.w, q.x, q.y, q.z}; }

// p (x) q = lmat(p) * q
Mat4 lmat(const Vec4& p) {
  Mat4 m;
  m << p[0], -p[1], -p[2], -p[3],
       p[1],  p[0], -p[3],  p[2],
       p[2],  p[3],  p[0], -p[1],
       p[3], -p[2],  p[1],  p[0];
  return m;
}

// p (x) q = rmat(q) * p
Mat4 rmat(const Vec4& q) {
  Mat4 m;
  m << q[0], -q[1], -q[2], -q[3],
       q[1],  q[0],  q[3], -q[2],
       q[2], -q[3],  q[0],  q[1],
       q[3],  q[2], -q[1],  q[0];
  return m;
}

Quat row_quat(const MatX& m, int i) { return {m(i, 0), m(i, 1), m(i, 2), m(i, 3)}; }

}  // namespace

double l1_recon(const Image& rendered, const Image& target, Image* d_rendered) {
  if (rendered.width != target.width || rendered.height != target.height) {
    throw std::runtime_error("image size mismatch");
  }
  const double count = static_cast<double>(rendered.data.size());
  double acc = 0.0;
  if (d_rendered) *d_rendered = Image(rendered.width, rendered.height);
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    acc += std::abs(d);
    if (d_rendered) d_rendered->data[i] = sign0(d) / count;
  }
  return acc / count;
}

double ssim(const Image& a, const Image& b, Image* d_a) {
  if (a.width != b.width || a.height != b.height) throw std::runtime_error("image size mismatch");
  if (a.width < kWin || a.height < kWin) {
    throw std::runtime_error("image too small for ssim window");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double* win = ssim_window();
  const int oh = a.height - kWin + 1;
  const int ow = a.width - kWin + 1;
  const double count = 3.0 * oh * ow;

  if (d_a) *d_a = Image(a.width, a.height);
  double total = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int wy = 0; wy < oh; ++wy) {
      for (int wx = 0; wx < ow; ++wx) {
        double m1x = 0, m1y = 0, m2x = 0, m2y = 0, mxy = 0;
        for (int dy = 0; dy < kWin; ++dy) {
          for (int dx = 0; dx < kWin; ++dx) {
            const double w = win[dy * kWin + dx];
            const double xv = a.at(wx + dx, wy + dy, ch);
            const double yv = b.at(wx + dx, wy + dy, ch);
            m1x += w * xv;
            m1y += w * yv;
            m2x += w * xv * xv;
            m2y += w * yv * yv;
            mxy += w * xv * yv;
          }
        }
        const double vx = m2x - m1x * m1x;
        const double vy = m2y - m1y * m1y;
        const double vxy = mxy - m1x * m1y;
        const double a1 = 2.0 * m1x * m1y + c1;
        const double a2 = 2.0 * vxy + c2;
        const double b1 = m1x * m1x + m1y * m1y + c1;
        const double b2 = vx + vy + c2;
        const double inv = 1.0 / (b1 * b2);
        const double s = a1 * a2 * inv;
        total += s;
        if (!d_a) continue;

        const double s_a1 = a2 * inv;
        const double s_a2 = a1 * inv;
        const double s_b1 = -s / b1;
        const double s_b2 = -s / b2;
        const double d_m1x =
            2.0 * m1y * s_a1 + 2.0 * m1x * s_b1 - 2.0 * m1x * s_b2 - 2.0 * m1y * s_a2;
        const double d_m2x = s_b2;
        const double d_mxy = 2.0 * s_a2;
        for (int dy = 0; dy < kWin; ++dy) {
          for (int dx = 0; dx < kWin; ++dx) {
            const double w = win[dy * kWin + dx];
            const double xv = a.at(wx + dx, wy + dy, ch);
            const double yv = b.at(wx + dx, wy + dy, ch);
            d_a->at(wx + dx, wy + dy, ch) += w * (d_m1x + 2.0 * xv * d_m2x + yv * d_mxy);
          }
        }
      }
    }
  }
  if (d_a) {
    for (double& v : d_a->data) v /= count;
  }
  return total / count;
}

double align_loss(const Image& rendered, const Image& target, Image* d_rendered, double w_l1,
                  double w_dssim) {
  Image g1, g2;
  const double l1 = l1_recon(rendered, target, d_rendered ? &g1 : nullptr);
  const double s = ssim(rendered, target, d_rendered ? &g2 : nullptr);
  if (d_rendered) {
    *d_rendered = Image(rendered.width, rendered.height);
    for (size_t i = 0; i < d_rendered->data.size(); ++i) {
      d_rendered->data[i] = w_l1 * g1.data[i] - w_dssim * g2.data[i];
    }
  }
  return w_l1 * l1 + w_dssim * (1.0 - s);
}

double small_motion(const DeformationOffsets& off, bool include_scale, DeformationOffsets* grad) {
  const int n = off.size();
  if (n == 0) return 0.0;
  if (grad) *grad = DeformationOffsets::zeros(n);
  double loss = 0.0;
  const double cx = 1.0 / (3.0 * n), cq = 1.0 / (4.0 * n), cs = 1.0 / (3.0 * n);
  loss += off.dx.array().abs().sum() * cx;
  loss += off.dq.array().abs().sum() * cq;
  if (include_scale) loss += off.ds.array().abs().sum() * cs;
  if (grad) {
    grad->dx = off.dx.unaryExpr(&sign0) * cx;
    grad->dq = off.dq.unaryExpr(&sign0) * cq;
    if (include_scale) grad->ds = off.ds.unaryExpr(&sign0) * cs;
  }
  return loss;
}

double norm_reg(const DeformationOffsets& off, DeformationOffsets* grad) {
  const int n = off.size();
  if (n == 0) return 0.0;
  if (grad) *grad = DeformationOffsets::zeros(n);
  const double c = 1.0 / n;
  const double loss =
      c * (off.dx.array().abs().sum() + off.dq.array().abs().sum() + off.ds.array().abs().sum());
  if (grad) {
    grad->dx = off.dx.unaryExpr(&sign0) * c;
    grad->dq = off.dq.unaryExpr(&sign0) * c;
    grad->ds = off.ds.unaryExpr(&sign0) * c;
  }
  return loss;
}

double diff_reg(const MatX& dx_t, const MatX& dx_tm1, MatX* g_t, MatX* g_tm1) {
  if (dx_t.rows() != dx_tm1.rows()) throw std::runtime_error("offset count mismatch");
  const int n = static_cast<int>(dx_t.rows());
  if (g_t) *g_t = MatX::Zero(n, 3);
  if (g_tm1) *g_tm1 = MatX::Zero(n, 3);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec3 d = (dx_t.row(i) - dx_tm1.row(i)).transpose();
    const double nrm = d.norm();
    loss += nrm;
    if (nrm > 0.0) {
      const Vec3 g = d / (nrm * n);
      if (g_t) g_t->row(i) += g.transpose();
      if (g_tm1) g_tm1->row(i) -= g.transpose();
    }
  }
  return loss / n;
}

KnnGraph build_knn(const MatX& positions, int k, double lambda_w) {
  const int n = static_cast<int>(positions.rows());
  if (k < 1) throw std::runtime_error("knn requires k >= 1");
  if (n <= k) throw std::runtime_error("knn requires more points than neighbors");
  KnnGraph g;
  g.k = k;
  g.lambda_w = lambda_w;
  g.neighbors = MatXi::Zero(n, k);
  g.weights = MatX::Zero(n, k);
  std::vector<std::pair<double, int>> dist(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      dist[j] = {(positions.row(j) - positions.row(i)).squaredNorm(), j};
    }
    dist[i].first = std::numeric_limits<double>::infinity();  // exclude self
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int m = 0; m < k; ++m) {
      g.neighbors(i, m) = dist[m].second;
      g.weights(i, m) = std::exp(-lambda_w * dist[m].first);
    }
  }
  return g;
}

double rigid_reg(const KnnGraph& g, const MatX& x_t, const MatX& x_tm1, const MatX& q_t,
                 const MatX& q_tm1, RigidGrads* grads) {
  const int n = g.size();
  if (x_t.rows() != n || x_tm1.rows() != n || q_t.rows() != n || q_tm1.rows() != n) {
    throw std::runtime_error("shape mismatch with knn graph");
  }
  std::vector<Mat3> rot_t(n), rot_tm1(n);
  for (int i = 0; i < n; ++i) {
    rot_t[i] = quat_to_rotmat(row_quat(q_t, i));
    rot_tm1[i] = quat_to_rotmat(row_quat(q_tm1, i));
  }

  const double norm = 1.0 / (static_cast<double>(n) * g.k);
  std::vector<Mat3> d_q_rot_t, d_q_rot_tm1;
  if (grads) {
    grads->d_x_t = MatX::Zero(n, 3);
    grads->d_x_tm1 = MatX::Zero(n, 3);
    grads->d_q_t = MatX::Zero(n, 4);
    grads->d_q_tm1 = MatX::Zero(n, 4);
    d_q_rot_t.assign(n, Mat3::Zero());
    d_q_rot_tm1.assign(n, Mat3::Zero());
  }

  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const Mat3 q_rel = rot_tm1[i] * rot_t[i].transpose();
    for (int m = 0; m < g.k; ++m) {
      const int j = g.neighbors(i, m);
      const double w = g.weights(i, m);
      const Vec3 a = (x_tm1.row(j) - x_tm1.row(i)).transpose();
      const Vec3 b = (x_t.row(j) - x_t.row(i)).transpose();
      const Vec3 r = a - q_rel * b;
      const double nrm = r.norm();
      loss += w * nrm;
      if (grads && nrm > 0.0) {
        const Vec3 gr = (w * norm / nrm) * r;
        grads->d_x_tm1.row(j) += gr.transpose();
        grads->d_x_tm1.row(i) -= gr.transpose();
        const Vec3 gb = -q_rel.transpose() * gr;
        grads->d_x_t.row(j) += gb.transpose();
        grads->d_x_t.row(i) -= gb.transpose();
        const Mat3 d_qrel = -gr * b.transpose();
        d_q_rot_tm1[i] += d_qrel * rot_t[i];
        d_q_rot_t[i] += d_qrel.transpose() * rot_tm1[i];
      }
    }
  }
  if (grads) {
    for (int i = 0; i < n; ++i) {
      grads->d_q_t.row(i) +=
          rotmat_grad_to_raw_quat(row_quat(q_t, i), d_q_rot_t[i]).transpose();
      grads->d_q_tm1.row(i) +=
          rotmat_grad_to_raw_quat(row_quat(q_tm1, i), d_q_rot_tm1[i]).transpose();
    }
  }
  return loss * norm;
}

double rot_reg(const KnnGraph& g, const MatX& q_t, const MatX& q_tm1, RotGrads* grads) {
  const int n = g.size();
  if (q_t.rows() != n || q_tm1.rows() != n) {
    throw std::runtime_error("shape mismatch with knn graph");
  }
  std::vector<Vec4> unit_t(n), unit_tm1(n), rel(n);
  std::vector<double> flip(n);
  for (int i = 0; i < n; ++i) {
    const Quat ut = row_quat(q_t, i).normalized();
    const Quat um = row_quat(q_tm1, i).normalized();
    unit_t[i] = quat_vec(ut);
    unit_tm1[i] = quat_vec(um);
    flip[i] = ut.dot(um) < 0.0 ? -1.0 : 1.0;
    const Quat conj_m = um.conjugate();
    const Quat r = quat_mul({flip[i] * ut.w, flip[i] * ut.x, flip[i] * ut.y, flip[i] * ut.z},
                            conj_m);
    rel[i] = quat_vec(r);
  }

  const double norm = 1.0 / (static_cast<double>(n) * g.k);
  std::vector<Vec4> d_rel;
  if (grads) {
    grads->d_q_t = MatX::Zero(n, 4);
    grads->d_q_tm1 = MatX::Zero(n, 4);
    d_rel.assign(n, Vec4::Zero());
  }

  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int m = 0; m < g.k; ++m) {
      const int j = g.neighbors(i, m);
      const double w = g.weights(i, m);
      const Vec4 r = rel[j] - rel[i];
      const double nrm = r.norm();
      loss += w * nrm;
      if (grads && nrm > 0.0) {
        const Vec4 gr = (w * norm / nrm) * r;
        d_rel[j] += gr;
        d_rel[i] -= gr;
      }
    }
  }
  if (grads) {
    static const Vec4 conj_sign{1.0, -1.0, -1.0, -1.0};
    for (int i = 0; i < n; ++i) {
      const Vec4 conj_m = conj_sign.cwiseProduct(unit_tm1[i]);
      // rel = (flip * u_t) (x) conj(u_tm1), bilinear in both factors.
      const Vec4 d_ut = flip[i] * (rmat(conj_m).transpose() * d_rel[i]);
      const Vec4 d_conj = lmat(flip[i] * unit_t[i]).transpose() * d_rel[i];
      const Vec4 d_um = conj_sign.cwiseProduct(d_conj);
      grads->d_q_t.row(i) +=
          quat_normalize_backward(q_t.row(i).transpose(), d_ut).transpose();
      grads->d_q_tm1.row(i) +=
          quat_normalize_backward(q_tm1.row(i).transpose(), d_um).transpose();
    }
  }
  return loss * norm;
}

double scene_extent_from_cameras(const std::vector<Camera>& cams) {
  if (cams.empty()) throw std::runtime_error("no cameras");
  Vec3 mean = Vec3::Zero();
  for (const Camera& c : cams) mean += c.center();
  mean /= static_cast<double>(cams.size());
  double r = 0.0;
  for (const Camera& c : cams) r = std::max(r, (c.center() - mean).norm());
  return r;
}

}  // namespace dgs
