#include "dgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dgs {

namespace {

constexpr double kNearClip = 0.01;
constexpr double kAlphaMin = 1.0 / 255.0;
constexpr double kAlphaMax = 0.99;
constexpr double kTransmitEps = 1e-4;
constexpr double kDilation = 0.3;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct SplatBBox {
  int x0, x1, y0, y1;  // inclusive
  bool empty;
};

SplatBBox bbox_of(const Vec2& uv, double radius, int w, int h) {
  SplatBBox b;
  b.x0 = std::max(0, static_cast<int>(std::floor(uv.x() - radius)));
  b.x1 = std::min(w - 1, static_cast<int>(std::ceil(uv.x() + radius)));
  b.y0 = std::max(0, static_cast<int>(std::floor(uv.y() - radius)));
  b.y1 = std::min(h - 1, static_cast<int>(std::ceil(uv.y() + radius)));
  b.empty = b.x0 > b.x1 || b.y0 > b.y1;
  return b;
}

}  // namespace

Image render(const GaussianCloud& cloud, const Camera& cam, const Vec3& background,
             const PoseDelta* pose, RenderCache* cache) {
  cloud.validate();
  if (cam.width < 1 || cam.height < 1) throw std::runtime_error("camera has empty image plane");

  const Camera rc = pose ? apply_pose_delta(cam, *pose) : cam;
  const int n = cloud.size();
  const int w = rc.width, h = rc.height;

  RenderCache local;
  RenderCache& cc = cache ? *cache : local;
  cc.width = w;
  cc.height = h;
  cc.background = background;
  cc.world_to_cam = rc.rotation;
  cc.cam_trans = rc.translation;
  cc.fx = rc.fx;
  cc.fy = rc.fy;
  cc.culled.assign(n, 1);
  cc.uv.assign(n, Vec2::Zero());
  cc.lambda.assign(n, Mat2::Zero());
  cc.cov2.assign(n, Mat2::Zero());
  cc.depth.assign(n, 0.0);
  cc.p_cam.assign(n, Vec3::Zero());
  cc.opacity.assign(n, 0.0);
  cc.color.assign(n, Vec3::Zero());
  cc.color_raw.assign(n, Vec3::Zero());
  cc.rot.assign(n, Mat3::Identity());
  cc.scale.assign(n, Vec3::Ones());
  cc.sigma3.assign(n, Mat3::Zero());
  cc.proj_jac.assign(n, Mat23::Zero());
  cc.radius_px.assign(n, 0.0);
  cc.order.clear();

  std::vector<SplatBBox> boxes(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 pc = rc.rotation * cloud.positions.row(i).transpose() + rc.translation;
    if (pc.z() < kNearClip) continue;
    const double z = pc.z();
    const Vec2 uv{rc.fx * pc.x() / z + rc.cx, rc.fy * pc.y() / z + rc.cy};

    const Quat q = cloud.rotation(i);
    const Mat3 r = quat_to_rotmat(q);
    const Vec3 s = cloud.scale(i);
    const Mat3 sigma3 = r * s.cwiseProduct(s).asDiagonal() * r.transpose();

    Mat23 jac;
    jac << rc.fx / z, 0.0, -rc.fx * pc.x() / (z * z),
           0.0, rc.fy / z, -rc.fy * pc.y() / (z * z);
    const Mat23 a = jac * rc.rotation;
    Mat2 cov2 = a * sigma3 * a.transpose();
    cov2(0, 0) += kDilation;
    cov2(1, 1) += kDilation;

    const double det = cov2.determinant();
    if (det <= 0.0) continue;
    Mat2 lambda;
    lambda << cov2(1, 1), -cov2(0, 1), -cov2(1, 0), cov2(0, 0);
    lambda /= det;

    const double mid = 0.5 * (cov2(0, 0) + cov2(1, 1));
    const double lam_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = 3.0 * std::sqrt(lam_max);
    boxes[i] = bbox_of(uv, radius, w, h);
    if (boxes[i].empty) continue;

    cc.culled[i] = 0;
    cc.uv[i] = uv;
    cc.lambda[i] = lambda;
    cc.cov2[i] = cov2;
    cc.depth[i] = z;
    cc.p_cam[i] = pc;
    cc.opacity[i] = sigmoid(cloud.opacity_logits[i]);
    cc.color_raw[i] = cloud.colors.row(i).transpose();
    cc.color[i] = cc.color_raw[i].cwiseMax(0.0).cwiseMin(1.0);
    cc.rot[i] = r;
    cc.scale[i] = s;
    cc.sigma3[i] = sigma3;
    cc.proj_jac[i] = jac;
    cc.radius_px[i] = radius;
  }

  for (int i = 0; i < n; ++i) {
    if (!cc.culled[i]) cc.order.push_back(i);
  }
  std::sort(cc.order.begin(), cc.order.end(), [&](int a, int b) {
    if (cc.depth[a] != cc.depth[b]) return cc.depth[a] < cc.depth[b];
    return a < b;
  });

  Image img(w, h);
  std::vector<double> transmit(static_cast<size_t>(w) * h, 1.0);
  std::vector<char> done(static_cast<size_t>(w) * h, 0);
  const bool keep_lists = cache != nullptr;
  if (keep_lists) cc.contribs.assign(static_cast<size_t>(w) * h, {});

  for (int idx : cc.order) {
    const SplatBBox& b = boxes[idx];
    const Vec2 uv = cc.uv[idx];
    const Mat2 lam = cc.lambda[idx];
    const double op = cc.opacity[idx];
    const Vec3 col = cc.color[idx];
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        const size_t p = static_cast<size_t>(y) * w + x;
        if (done[p]) continue;
        const Vec2 d{x + 0.5 - uv.x(), y + 0.5 - uv.y()};
        const double power = -0.5 * d.dot(lam * d);
        if (power > 0.0) continue;
        const double alpha = std::min(kAlphaMax, op * std::exp(power));
        if (alpha < kAlphaMin) continue;
        const double t_new = transmit[p] * (1.0 - alpha);
        if (t_new < kTransmitEps) {
          done[p] = 1;
          continue;
        }
        const double wgt = alpha * transmit[p];
        img.at(x, y, 0) += wgt * col.x();
        img.at(x, y, 1) += wgt * col.y();
        img.at(x, y, 2) += wgt * col.z();
        transmit[p] = t_new;
        if (keep_lists) cc.contribs[p].push_back(idx);
      }
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t p = static_cast<size_t>(y) * w + x;
      img.at(x, y, 0) += transmit[p] * background.x();
      img.at(x, y, 1) += transmit[p] * background.y();
      img.at(x, y, 2) += transmit[p] * background.z();
    }
  }
  cc.final_t.assign(transmit.begin(), transmit.end());
  return img;
}

RenderGrads render_backward(const GaussianCloud& cloud, const RenderCache& cache,
                            const Image& grad_image) {
  const int n = cloud.size();
  const int w = cache.width, h = cache.height;
  if (grad_image.width != w || grad_image.height != h) {
    throw std::runtime_error("grad image size mismatch");
  }
  if (cache.contribs.empty() && w * h > 0) {
    throw std::runtime_error("render cache has no contribution lists");
  }

  RenderGrads g;
  g.d_positions = MatX::Zero(n, 3);
  g.d_raw_rotations = MatX::Zero(n, 4);
  g.d_log_scales = MatX::Zero(n, 3);
  g.d_opacity_logits = VecX::Zero(n);
  g.d_colors = MatX::Zero(n, 3);

  std::vector<Vec2> d_uv(n, Vec2::Zero());
  std::vector<Mat2> d_lambda(n, Mat2::Zero());
  std::vector<double> d_opacity(n, 0.0);

  std::vector<double> alphas, ts;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t p = static_cast<size_t>(y) * w + x;
      const std::vector<int>& list = cache.contribs[p];
      const Vec3 gpix{grad_image.at(x, y, 0), grad_image.at(x, y, 1), grad_image.at(x, y, 2)};
      if (list.empty()) continue;
      if (gpix.isZero(0.0)) continue;

      // Replay compositing to recover per-contribution alpha and incoming T.
      alphas.resize(list.size());
      ts.resize(list.size());
      double t_run = 1.0;
      for (size_t k = 0; k < list.size(); ++k) {
        const int i = list[k];
        const Vec2 d{x + 0.5 - cache.uv[i].x(), y + 0.5 - cache.uv[i].y()};
        const double power = -0.5 * d.dot(cache.lambda[i] * d);
        const double alpha = std::min(kAlphaMax, cache.opacity[i] * std::exp(power));
        alphas[k] = alpha;
        ts[k] = t_run;
        t_run *= 1.0 - alpha;
      }

      Vec3 suffix = cache.final_t[p] * cache.background;
      for (size_t k = list.size(); k-- > 0;) {
        const int i = list[k];
        const double alpha = alphas[k];
        const double t_in = ts[k];
        const Vec3 col = cache.color[i];

        for (int c = 0; c < 3; ++c) {
          const double raw = cache.color_raw[i][c];
          if (raw >= 0.0 && raw <= 1.0) g.d_colors(i, c) += alpha * t_in * gpix[c];
        }

        double d_alpha = 0.0;
        for (int c = 0; c < 3; ++c) {
          d_alpha += gpix[c] * (t_in * col[c] - suffix[c] / (1.0 - alpha));
        }
        suffix += alpha * t_in * col;

        const Vec2 d{x + 0.5 - cache.uv[i].x(), y + 0.5 - cache.uv[i].y()};
        const double power = -0.5 * d.dot(cache.lambda[i] * d);
        const double gauss = std::exp(power);
        if (cache.opacity[i] * gauss < kAlphaMax) {
          d_opacity[i] += gauss * d_alpha;
          const double d_gauss = cache.opacity[i] * d_alpha;
          const double d_power = d_gauss * gauss;
          d_uv[i] += d_power * (cache.lambda[i] * d);
          d_lambda[i] += -0.5 * d_power * (d * d.transpose());
        }
      }
    }
  }

  Mat3 d_w_total = Mat3::Zero();

  for (int i = 0; i < n; ++i) {
    if (cache.culled[i]) continue;

    const double op = cache.opacity[i];
    g.d_opacity_logits[i] = d_opacity[i] * op * (1.0 - op);

    // Lambda = Cov2^-1  =>  dCov2 = -Lambda dLambda Lambda.
    const Mat2 d_cov2 = -cache.lambda[i] * d_lambda[i] * cache.lambda[i];
    const Mat2 d_cov2_sym = 0.5 * (d_cov2 + d_cov2.transpose());

    const Mat23 a = cache.proj_jac[i] * cache.world_to_cam;
    const Mat3 d_sigma3 = a.transpose() * d_cov2_sym * a;
    const Mat23 d_a = 2.0 * d_cov2_sym * a * cache.sigma3[i];
    const Mat23 d_jac = d_a * cache.world_to_cam.transpose();
    const Mat3 d_w_from_cov = cache.proj_jac[i].transpose() * d_a;

    // Scale chain: Sigma3 = R diag(s^2) R^T, parameters are log s.
    const Mat3 d_sigma3_sym = 0.5 * (d_sigma3 + d_sigma3.transpose());
    const Mat3 r = cache.rot[i];
    const Vec3 s = cache.scale[i];
    const Mat3 rtdr = r.transpose() * d_sigma3_sym * r;
    for (int k = 0; k < 3; ++k) {
      g.d_log_scales(i, k) = 2.0 * s[k] * s[k] * rtdr(k, k);
    }
    const Mat3 d_r = 2.0 * d_sigma3_sym * r * s.cwiseProduct(s).asDiagonal();
    const Vec4 d_rawq = rotmat_grad_to_raw_quat(cloud.rotation(i), d_r);
    g.d_raw_rotations.row(i) += d_rawq.transpose();

    // Projection chain back to the camera-space point.
    const Vec3 pc = cache.p_cam[i];
    const double z = pc.z();
    const double fx = cache.fx, fy = cache.fy;
    Vec3 d_pc = Vec3::Zero();
    d_pc.x() += d_uv[i].x() * fx / z;
    d_pc.y() += d_uv[i].y() * fy / z;
    d_pc.z() += -d_uv[i].x() * fx * pc.x() / (z * z) - d_uv[i].y() * fy * pc.y() / (z * z);
    d_pc.x() += d_jac(0, 2) * (-fx / (z * z));
    d_pc.y() += d_jac(1, 2) * (-fy / (z * z));
    d_pc.z() += d_jac(0, 0) * (-fx / (z * z)) + d_jac(1, 1) * (-fy / (z * z)) +
                d_jac(0, 2) * (2.0 * fx * pc.x() / (z * z * z)) +
                d_jac(1, 2) * (2.0 * fy * pc.y() / (z * z * z));

    g.d_positions.row(i) += (cache.world_to_cam.transpose() * d_pc).transpose();

    // Pose delta chain, evaluated at omega = 0. Both the point transform and
    // the covariance warp route through the same rotation.
    d_w_total += d_w_from_cov;
    d_w_total += d_pc * cloud.positions.row(i);
    g.d_dt += d_pc;
  }

  const Mat3 b = d_w_total * cache.world_to_cam.transpose();
  g.d_axis_angle.x() += b(2, 1) - b(1, 2);
  g.d_axis_angle.y() += b(0, 2) - b(2, 0);
  g.d_axis_angle.z() += b(1, 0) - b(0, 1);

  return g;
}

RenderGrads render_backward(const GaussianCloud& cloud, const Camera& cam, const Vec3& background,
                            const Image& grad_image, const PoseDelta* pose) {
  RenderCache cache;
  render(cloud, cam, background, pose, &cache);
  return render_backward(cloud, cache, grad_image);
}

}  // namespace dgs
