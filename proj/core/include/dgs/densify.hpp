#pragma once

#include <vector>

#include "dgs/rasterizer.hpp"
#include "dgs/rng.hpp"
#include "dgs/scene.hpp"
#include "dgs/types.hpp"

namespace dgs {

// Per-splat gradient bookkeeping between densification events.
struct GradStats {
  VecX accum_pos_grad_norm;
  VecXi counts;
  VecX max_screen_radius;

  static GradStats zeros(int n);
  int size() const { return static_cast<int>(counts.size()); }
};

// Adds the world-space positional gradient norm and bumps the visibility
// count for every splat with a nonzero screen radius.
void accumulate(GradStats& stats, const RenderGrads& grads,
                const std::vector<double>& screen_radii);

struct DensifyConfig {
  double tau_alpha = 5e-3;
  double tau_grad = 2e-4;
  double split_factor = 1.6;
  double scene_extent = 1.0;
  int interval = 100;
};

// How each row of the new cloud relates to the old one. `source[j]` is the
// old index row j derives from; `fresh[j]` marks rows whose optimizer state
// starts from zero (clone copies and split children).
struct DensifyReport {
  std::vector<int> source;
  std::vector<char> fresh;
  std::vector<int> pruned;
  int n_cloned = 0;
  int n_split = 0;
  int n_pruned = 0;
  bool identity() const { return n_cloned + n_split + n_pruned == 0; }
};

// Clone (max activated scale < 1% of extent) or split (otherwise) splats whose
// mean positional gradient reaches tau_grad; prune splats whose activated
// opacity falls below tau_alpha. Frozen splats are returned bitwise unchanged
// and never participate. Split children divide scales by split_factor and
// draw positions from the parent's own Gaussian.
GaussianCloud densify_and_prune(const GaussianCloud& cloud, const GradStats& stats,
                                const DensifyConfig& cfg, const std::vector<char>& frozen_mask,
                                RngStream& rng, DensifyReport* report);

// Motion-stage growth: identical mechanics with the motion-stage config
// (higher opacity threshold), statistics restricted to non-frozen splats.
GaussianCloud motion_growth_pass(const GaussianCloud& cloud, const GradStats& stats,
                                 const DensifyConfig& cfg_motion,
                                 const std::vector<char>& frozen_mask, RngStream& rng,
                                 DensifyReport* report);

}  // namespace dgs
