#pragma once

#include <vector>

#include "dgs/camera.hpp"
#include "dgs/image.hpp"
#include "dgs/scene.hpp"
#include "dgs/types.hpp"

namespace dgs {

// Per-splat projected state plus per-pixel contribution lists, captured by
// render() so render_backward() can replay compositing exactly.
struct RenderCache {
  int width = 0, height = 0;
  Vec3 background = Vec3::Zero();

  std::vector<char> culled;        // near-plane or off-screen
  std::vector<Vec2> uv;            // projected center, pixel units
  std::vector<Mat2> lambda;        // inverse of the 2D covariance
  std::vector<Mat2> cov2;          // dilated 2D covariance
  std::vector<double> depth;       // camera-space z
  std::vector<Vec3> p_cam;
  std::vector<double> opacity;     // activated
  std::vector<Vec3> color;         // clamped to [0,1]
  std::vector<Vec3> color_raw;     // pre-clamp, for the clamp subgradient
  std::vector<Mat3> rot;           // normalized rotation matrix per splat
  std::vector<Vec3> scale;         // activated (exp of log scales)
  std::vector<Mat3> sigma3;
  std::vector<Mat23> proj_jac;     // J, d(uv)/d(p_cam)
  std::vector<double> radius_px;   // 3-sigma screen radius, 0 when culled

  std::vector<int> order;                   // surviving splats, front to back
  std::vector<std::vector<int>> contribs;   // per pixel, splat ids in composite order
  std::vector<double> final_t;              // per pixel transmittance after compositing

  Mat3 world_to_cam;  // rotation actually used (pose delta applied)
  Vec3 cam_trans;
  double fx = 0, fy = 0;
};

// Front-to-back alpha compositing of 3-sigma-culled splats over a constant
// background. Per-pixel traversal follows one exact global depth sort
// (ties broken by splat index). A contribution is skipped when its alpha
// drops below 1/255; compositing stops once transmittance would fall
// below 1e-4. Alpha is clamped to 0.99. The 2D covariance is dilated by
// 0.3 * I. Pixel (x, y) is sampled at its center (x + 0.5, y + 0.5).
Image render(const GaussianCloud& cloud, const Camera& cam, const Vec3& background,
             const PoseDelta* pose = nullptr, RenderCache* cache = nullptr);

struct RenderGrads {
  MatX d_positions;       // N x 3
  MatX d_raw_rotations;   // N x 4
  MatX d_log_scales;      // N x 3
  VecX d_opacity_logits;  // N
  MatX d_colors;          // N x 3
  Vec3 d_axis_angle = Vec3::Zero();  // pose delta rotation grad, at zero delta
  Vec3 d_dt = Vec3::Zero();
};

// Exact vector-Jacobian product of render() given d(loss)/d(image).
// Clamp subgradients (alpha cap, color clamp) are zero on the clamped side.
RenderGrads render_backward(const GaussianCloud& cloud, const RenderCache& cache,
                            const Image& grad_image);

// Stateless variant: renders internally to rebuild the compositing state.
RenderGrads render_backward(const GaussianCloud& cloud, const Camera& cam, const Vec3& background,
                            const Image& grad_image, const PoseDelta* pose = nullptr);

}  // namespace dgs
