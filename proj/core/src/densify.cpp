#include "dgs/densify.hpp"

#include <cmath>
#include <stdexcept>

namespace dgs {

GradStats GradStats::zeros(int n) {
  GradStats s;
  s.accum_pos_grad_norm = VecX::Zero(n);
  s.counts = VecXi::Zero(n);
  s.max_screen_radius = VecX::Zero(n);
  return s;
}

void accumulate(GradStats& stats, const RenderGrads& grads,
                const std::vector<double>& screen_radii) {
  const int n = stats.size();
  if (grads.d_positions.rows() != n || static_cast<int>(screen_radii.size()) != n) {
    throw std::runtime_error("grad stats shape mismatch");
  }
  for (int i = 0; i < n; ++i) {
    if (screen_radii[i] <= 0.0) continue;
    stats.accum_pos_grad_norm[i] += grads.d_positions.row(i).norm();
    stats.counts[i] += 1;
    stats.max_screen_radius[i] = std::max(stats.max_screen_radius[i], screen_radii[i]);
  }
}

GaussianCloud densify_and_prune(const GaussianCloud& cloud, const GradStats& stats,
                                const DensifyConfig& cfg, const std::vector<char>& frozen_mask,
                                RngStream& rng, DensifyReport* report) {
  cloud.validate();
  const int n = cloud.size();
  if (stats.size() != n || static_cast<int>(frozen_mask.size()) != n) {
    throw std::runtime_error("densify inputs misaligned with cloud");
  }

  enum Action { kKeep, kClone, kSplit, kPrune };
  std::vector<Action> action(n, kKeep);
  int n_new = 0;
  for (int i = 0; i < n; ++i) {
    if (frozen_mask[i]) {
      ++n_new;
      continue;
    }
    if (cloud.opacity(i) < cfg.tau_alpha) {
      action[i] = kPrune;
      continue;
    }
    const double mean_grad =
        stats.counts[i] > 0 ? stats.accum_pos_grad_norm[i] / stats.counts[i] : 0.0;
    if (mean_grad >= cfg.tau_grad) {
      const double max_scale = cloud.scale(i).maxCoeff();
      action[i] = max_scale < 0.01 * cfg.scene_extent ? kClone : kSplit;
      n_new += 2;
    } else {
      ++n_new;
    }
  }
  if (n_new == 0) throw std::runtime_error("scene collapsed");

  GaussianCloud out = GaussianCloud::empty(n_new);
  DensifyReport rep;
  rep.source.reserve(n_new);
  rep.fresh.reserve(n_new);

  int at = 0;
  auto copy_row = [&](int src, bool fresh) {
    out.positions.row(at) = cloud.positions.row(src);
    out.raw_rotations.row(at) = cloud.raw_rotations.row(src);
    out.log_scales.row(at) = cloud.log_scales.row(src);
    out.opacity_logits[at] = cloud.opacity_logits[src];
    out.colors.row(at) = cloud.colors.row(src);
    rep.source.push_back(src);
    rep.fresh.push_back(fresh ? 1 : 0);
    ++at;
  };

  const double log_split = std::log(cfg.split_factor);
  for (int i = 0; i < n; ++i) {
    switch (action[i]) {
      case kKeep:
        copy_row(i, false);
        break;
      case kClone:
        copy_row(i, false);
        copy_row(i, true);
        ++rep.n_cloned;
        break;
      case kSplit: {
        const Mat3 r = quat_to_rotmat(cloud.rotation(i));
        const Vec3 s = cloud.scale(i);
        for (int child = 0; child < 2; ++child) {
          const Vec3 sample{rng.normal(), rng.normal(), rng.normal()};
          copy_row(i, true);
          out.positions.row(at - 1) =
              cloud.positions.row(i) + (r * s.cwiseProduct(sample)).transpose();
          out.log_scales.row(at - 1) = cloud.log_scales.row(i).array() - log_split;
        }
        ++rep.n_split;
        break;
      }
      case kPrune:
        rep.pruned.push_back(i);
        ++rep.n_pruned;
        break;
    }
  }

  if (report) *report = rep;
  return out;
}

GaussianCloud motion_growth_pass(const GaussianCloud& cloud, const GradStats& stats,
                                 const DensifyConfig& cfg_motion,
                                 const std::vector<char>& frozen_mask, RngStream& rng,
                                 DensifyReport* report) {
  return densify_and_prune(cloud, stats, cfg_motion, frozen_mask, rng, report);
}

}  // namespace dgs
