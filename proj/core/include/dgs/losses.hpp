#pragma once

#include <vector>

#include "dgs/camera.hpp"
#include "dgs/image.hpp"
#include "dgs/scene.hpp"
#include "dgs/types.hpp"

namespace dgs {

// Mean absolute difference over pixels and channels. Subgradient at ties is 0.
double l1_recon(const Image& rendered, const Image& target, Image* d_rendered = nullptr);

// Mean local SSIM, 11x11 Gaussian window sigma=1.5, valid windows only,
// C1=(0.01)^2, C2=(0.03)^2 on [0,1] range. Gradient with respect to `a`.
double ssim(const Image& a, const Image& b, Image* d_a = nullptr);

// w_l1 * L1 + w_dssim * (1 - SSIM).
double align_loss(const Image& rendered, const Image& target, Image* d_rendered = nullptr,
                  double w_l1 = 0.8, double w_dssim = 0.2);

// Per-coordinate mean L1 of each offset block, summed over blocks.
// dq counts 4 coordinates per splat; ds is skipped unless include_scale.
double small_motion(const DeformationOffsets& off, bool include_scale,
                    DeformationOffsets* grad = nullptr);

// (1/N) sum_i (|dx_i|_1 + |dq_i|_1 + |ds_i|_1).
double norm_reg(const DeformationOffsets& off, DeformationOffsets* grad = nullptr);

// (1/N) sum_i |dx_t_i - dx_tm1_i|_2.
double diff_reg(const MatX& dx_t, const MatX& dx_tm1, MatX* g_t = nullptr, MatX* g_tm1 = nullptr);

struct KnnGraph {
  MatXi neighbors;  // N x k, self excluded
  MatX weights;     // N x k, exp(-lambda_w d^2), frozen at build time
  double lambda_w = 0.0;
  int k = 0;
  int size() const { return static_cast<int>(neighbors.rows()); }
};

// Exact Euclidean k nearest neighbors, ties broken by lower index. N must
// exceed k.
KnnGraph build_knn(const MatX& positions, int k, double lambda_w);

struct RigidGrads {
  MatX d_x_t, d_x_tm1;  // N x 3
  MatX d_q_t, d_q_tm1;  // N x 4, raw-quaternion domain
};

// (1/(Nk)) sum_ij w_ij |(x_j' - x_i') - R_i' R_i^T (x_j - x_i)|_2 with
// primes meaning t-1 and rotations from normalized quaternions.
double rigid_reg(const KnnGraph& g, const MatX& x_t, const MatX& x_tm1, const MatX& q_t,
                 const MatX& q_tm1, RigidGrads* grads = nullptr);

struct RotGrads {
  MatX d_q_t, d_q_tm1;  // N x 4
};

// (1/(Nk)) sum_ij w_ij |rel_j - rel_i|_2 with rel_m = qhat_m,t (x) qhat_m,t-1^-1.
// qhat_t is sign-flipped to the hemisphere of qhat_t-1 so the double cover
// never manufactures a penalty between equivalent rotations.
double rot_reg(const KnnGraph& g, const MatX& q_t, const MatX& q_tm1, RotGrads* grads = nullptr);

// Radius of the sphere centered on the mean camera position that contains all
// camera positions.
double scene_extent_from_cameras(const std::vector<Camera>& cams);

}  // namespace dgs
