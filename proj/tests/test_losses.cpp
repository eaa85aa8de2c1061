#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dgs/finite_diff.hpp"
#include "dgs/losses.hpp"
#include "dgs/rng.hpp"

using namespace dgs;

namespace {

Image random_image(int w, int h, RngStream& rng) {
  Image img(w, h);
  for (auto& v : img.data) v = rng.uniform(0.1, 0.9);
  return img;
}

MatX random_mat(int r, int c, RngStream& rng, double scale = 1.0) {
  MatX m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

MatX random_unit_quats(int n, RngStream& rng) {
  MatX q(n, 4);
  for (int i = 0; i < n; ++i) {
    Vec4 v(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.row(i) = v.normalized().transpose();
  }
  return q;
}

VecX flat(const MatX& m) { return Eigen::Map<const VecX>(m.data(), m.size()); }

MatX unflat(const VecX& v, int r, int c) { return Eigen::Map<const MatX>(v.data(), r, c); }

}  // namespace

TEST_CASE("l1 value and gradient") {
  Image a(2, 1), b(2, 1);
  a.at(0, 0, 0) = 0.5;
  b.at(0, 0, 0) = 0.2;
  a.at(1, 0, 2) = 0.1;
  b.at(1, 0, 2) = 0.4;
  Image d;
  const double v = l1_recon(a, b, &d);
  CHECK(v == doctest::Approx(0.6 / 6.0).epsilon(1e-15));
  CHECK(d.at(0, 0, 0) == doctest::Approx(1.0 / 6.0));
  CHECK(d.at(1, 0, 2) == doctest::Approx(-1.0 / 6.0));
  CHECK(d.at(0, 0, 1) == 0.0);  // tied values carry no subgradient
}

TEST_CASE("ssim is one on identical images and degrades with noise") {
  RngStream rng(1);
  const Image a = random_image(16, 12, rng);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Image b = a;
  for (auto& v : b.data) v = std::clamp(v + 0.1 * rng.normal(), 0.0, 1.0);
  const double s = ssim(a, b);
  CHECK(s < 0.999);
  CHECK(s > 0.0);
}

TEST_CASE("ssim gradient matches finite differences") {
  RngStream rng(2);
  const Image a = random_image(13, 12, rng);
  const Image b = random_image(13, 12, rng);
  Image d;
  ssim(a, b, &d);
  VecX x0 = Eigen::Map<const VecX>(a.data.data(), a.data.size());
  VecX ga = Eigen::Map<const VecX>(d.data.data(), d.data.size());
  auto f = [&](const VecX& v) {
    Image img = a;
    std::copy(v.data(), v.data() + v.size(), img.data.begin());
    return ssim(img, b);
  };
  // Gradients on a 13x12 image run down to 1e-7, so step 1e-5 keeps the
  // central-difference noise floor safely below the tolerance.
  const auto res = check_gradient(f, x0, ga, 1e-5, 1e-5);
  CHECK(res.pass_rate() == 1.0);
}

TEST_CASE("align_loss combines l1 and dssim") {
  RngStream rng(3);
  const Image a = random_image(14, 12, rng);
  const Image b = random_image(14, 12, rng);
  Image da, dl, ds;
  const double v = align_loss(a, b, &da, 0.7, 0.3);
  const double l1 = l1_recon(a, b, &dl);
  const double ss = ssim(a, b, &ds);
  CHECK(v == doctest::Approx(0.7 * l1 + 0.3 * (1.0 - ss)).epsilon(1e-13));
  for (size_t i = 0; i < da.data.size(); ++i) {
    CHECK(da.data[i] ==
          doctest::Approx(0.7 * dl.data[i] - 0.3 * ds.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("small_motion averages per coordinate, block by block") {
  DeformationOffsets off = DeformationOffsets::zeros(2);
  off.dx << 1.0, -2.0, 0.0, 0.5, 0.5, 0.5;
  off.dq << 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0;
  off.ds << 0.3, 0.3, 0.3, 0.3, 0.3, 0.3;
  const double dx_mean = (1.0 + 2.0 + 0.0 + 0.5 + 0.5 + 0.5) / 6.0;
  const double dq_mean = 8.0 / 8.0;
  const double ds_mean = 0.3;
  CHECK(small_motion(off, true) == doctest::Approx(dx_mean + dq_mean + ds_mean).epsilon(1e-15));
  CHECK(small_motion(off, false) == doctest::Approx(dx_mean + dq_mean).epsilon(1e-15));

  DeformationOffsets grad;
  small_motion(off, true, &grad);
  CHECK(grad.dx(0, 0) == doctest::Approx(1.0 / 6.0));
  CHECK(grad.dx(0, 1) == doctest::Approx(-1.0 / 6.0));
  CHECK(grad.dq(1, 0) == doctest::Approx(-1.0 / 8.0));
  CHECK(grad.ds(0, 0) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("small_motion and norm_reg vanish on zero offsets") {
  const DeformationOffsets off = DeformationOffsets::zeros(7);
  CHECK(small_motion(off, true) == 0.0);
  CHECK(small_motion(off, false) == 0.0);
  CHECK(norm_reg(off) == 0.0);
}

TEST_CASE("norm_reg is the per-splat l1 sum averaged over splats") {
  DeformationOffsets off = DeformationOffsets::zeros(2);
  off.dx << 1.0, 0.0, 0.0, 0.0, 2.0, 0.0;
  off.dq.row(1) << 0.5, 0.0, 0.0, -0.5;
  off.ds.row(0) << 0.0, 0.0, 3.0;
  CHECK(norm_reg(off) == doctest::Approx((1.0 + 3.0 + 2.0 + 1.0) / 2.0).epsilon(1e-15));
  DeformationOffsets grad;
  norm_reg(off, &grad);
  CHECK(grad.dx(1, 1) == doctest::Approx(0.5));
  CHECK(grad.ds(0, 2) == doctest::Approx(0.5));
}

TEST_CASE("diff_reg is zero for equal offsets and matches finite differences") {
  RngStream rng(4);
  const MatX a = random_mat(5, 3, rng);
  CHECK(diff_reg(a, a) == 0.0);

  const MatX b = random_mat(5, 3, rng);
  MatX gt, gp;
  const double v = diff_reg(a, b, &gt, &gp);
  double expect = 0.0;
  for (int i = 0; i < 5; ++i) expect += (a.row(i) - b.row(i)).norm();
  CHECK(v == doctest::Approx(expect / 5.0).epsilon(1e-13));

  auto f = [&](const VecX& x) { return diff_reg(unflat(x, 5, 3), b); };
  const auto res = check_gradient(f, flat(a), flat(gt), 1e-6, 1e-7);
  CHECK(res.pass_rate() == 1.0);
  auto f2 = [&](const VecX& x) { return diff_reg(a, unflat(x, 5, 3)); };
  const auto res2 = check_gradient(f2, flat(b), flat(gp), 1e-6, 1e-7);
  CHECK(res2.pass_rate() == 1.0);
}

TEST_CASE("knn graph matches a brute-force neighbor search") {
  RngStream rng(5);
  const int n = 40, k = 6;
  const MatX pts = random_mat(n, 3, rng);
  const KnnGraph g = build_knn(pts, k, 2.5);
  REQUIRE(g.neighbors.rows() == n);
  REQUIRE(g.neighbors.cols() == k);
  CHECK(g.k == k);
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      const double da = (pts.row(a) - pts.row(i)).squaredNorm();
      const double db = (pts.row(b) - pts.row(i)).squaredNorm();
      if (da != db) return da < db;
      return a < b;
    });
    for (int m = 0; m < k; ++m) {
      CHECK(g.neighbors(i, m) == idx[m]);
      const double d2 = (pts.row(idx[m]) - pts.row(i)).squaredNorm();
      CHECK(g.weights(i, m) == doctest::Approx(std::exp(-2.5 * d2)).epsilon(1e-13));
    }
  }
  CHECK_THROWS(build_knn(random_mat(3, 3, rng), 3, 1.0));
}

TEST_CASE("rigid_reg vanishes under global rigid motion") {
  RngStream rng(6);
  const int n = 12;
  const MatX x_t = random_mat(n, 3, rng);
  const MatX q_t = random_unit_quats(n, rng);
  const KnnGraph g = build_knn(x_t, 4, 1.0);

  const Vec3 aa(0.3, -0.5, 0.7);
  const Mat3 rot = axis_angle_to_rotmat(aa);
  const Quat rq = axis_angle_to_quat(aa);
  const Vec3 shift(0.2, 1.0, -0.4);
  MatX x_p(n, 3), q_p(n, 4);
  for (int i = 0; i < n; ++i) {
    x_p.row(i) = (rot * Vec3(x_t.row(i).transpose()) + shift).transpose();
    const Quat qi{q_t(i, 0), q_t(i, 1), q_t(i, 2), q_t(i, 3)};
    const Quat composed = quat_mul(rq, qi);
    q_p.row(i) << composed.w, composed.x, composed.y, composed.z;
  }
  CHECK(rigid_reg(g, x_t, x_p, q_t, q_p) <= 1e-8);
}

TEST_CASE("rigid_reg gradients match finite differences") {
  RngStream rng(7);
  const int n = 8;
  const MatX x_t = random_mat(n, 3, rng);
  const MatX x_p = x_t + random_mat(n, 3, rng, 0.1);
  const MatX q_t = random_unit_quats(n, rng);
  MatX q_p = q_t + random_mat(n, 4, rng, 0.05);
  const KnnGraph g = build_knn(x_t, 3, 1.0);
  RigidGrads grads;
  rigid_reg(g, x_t, x_p, q_t, q_p, &grads);

  auto fx_t = [&](const VecX& v) { return rigid_reg(g, unflat(v, n, 3), x_p, q_t, q_p); };
  CHECK(check_gradient(fx_t, flat(x_t), flat(grads.d_x_t), 1e-6, 1e-6).pass_rate() == 1.0);
  auto fx_p = [&](const VecX& v) { return rigid_reg(g, x_t, unflat(v, n, 3), q_t, q_p); };
  CHECK(check_gradient(fx_p, flat(x_p), flat(grads.d_x_tm1), 1e-6, 1e-6).pass_rate() == 1.0);
  auto fq_t = [&](const VecX& v) { return rigid_reg(g, x_t, x_p, unflat(v, n, 4), q_p); };
  CHECK(check_gradient(fq_t, flat(q_t), flat(grads.d_q_t), 1e-6, 1e-6).pass_rate() == 1.0);
  auto fq_p = [&](const VecX& v) { return rigid_reg(g, x_t, x_p, q_t, unflat(v, n, 4)); };
  CHECK(check_gradient(fq_p, flat(q_p), flat(grads.d_q_tm1), 1e-6, 1e-6).pass_rate() == 1.0);
}

TEST_CASE("rot_reg vanishes under a uniform rotation delta") {
  RngStream rng(8);
  const int n = 10;
  const MatX x = random_mat(n, 3, rng);
  const KnnGraph g = build_knn(x, 4, 1.0);
  const MatX q_p = random_unit_quats(n, rng);
  const Quat delta = axis_angle_to_quat(Vec3(0.1, 0.2, -0.15));
  MatX q_t(n, 4);
  for (int i = 0; i < n; ++i) {
    const Quat composed = quat_mul(delta, Quat{q_p(i, 0), q_p(i, 1), q_p(i, 2), q_p(i, 3)});
    q_t.row(i) << composed.w, composed.x, composed.y, composed.z;
  }
  CHECK(rot_reg(g, q_t, q_p) <= 1e-8);

  // The double cover must not manufacture a penalty: flipping the sign of
  // some raw quaternions leaves the rotations, and so the loss, unchanged.
  MatX q_flip = q_t;
  q_flip.row(2) *= -1.0;
  q_flip.row(7) *= -1.0;
  CHECK(rot_reg(g, q_flip, q_p) <= 1e-8);
}

TEST_CASE("rot_reg gradients match finite differences") {
  RngStream rng(9);
  const int n = 8;
  const MatX x = random_mat(n, 3, rng);
  const KnnGraph g = build_knn(x, 3, 1.0);
  const MatX q_p = random_unit_quats(n, rng);
  MatX q_t = q_p + random_mat(n, 4, rng, 0.1);
  RotGrads grads;
  rot_reg(g, q_t, q_p, &grads);
  auto fq_t = [&](const VecX& v) { return rot_reg(g, unflat(v, n, 4), q_p); };
  CHECK(check_gradient(fq_t, flat(q_t), flat(grads.d_q_t), 1e-6, 1e-6).pass_rate() == 1.0);
  auto fq_p = [&](const VecX& v) { return rot_reg(g, q_t, unflat(v, n, 4)); };
  CHECK(check_gradient(fq_p, flat(q_p), flat(grads.d_q_tm1), 1e-6, 1e-6).pass_rate() == 1.0);
}

TEST_CASE("scene extent is the bounding radius about the mean center") {
  std::vector<Camera> cams;
  for (double xpos : {-1.0, 1.0, 3.0}) {
    cams.push_back(look_at(Vec3(xpos, 0, -2), Vec3::Zero(), Vec3(0, -1, 0), 50, 50, 32, 32));
  }
  // Centers at x = -1, 1, 3 -> mean (1, 0, -2), far point at distance 2.
  CHECK(scene_extent_from_cameras(cams) == doctest::Approx(2.0).epsilon(1e-12));
}
