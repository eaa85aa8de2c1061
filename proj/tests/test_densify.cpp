#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dgs/densify.hpp"
#include "dgs/rng.hpp"

using namespace dgs;

namespace {

GaussianCloud uniform_cloud(int n, double log_scale) {
  GaussianCloud c = GaussianCloud::empty(n);
  for (int i = 0; i < n; ++i) c.positions.row(i) << 0.1 * i, 0.0, 0.0;
  c.log_scales.setConstant(log_scale);
  c.opacity_logits.setConstant(2.0);
  return c;
}

GradStats stats_with_grad(int n, const std::vector<int>& hot, double value) {
  GradStats s = GradStats::zeros(n);
  for (int i : hot) {
    s.accum_pos_grad_norm[i] = value;
    s.counts[i] = 1;
    s.max_screen_radius[i] = 3.0;
  }
  return s;
}

}  // namespace

TEST_CASE("accumulate adds norms only for splats with screen coverage") {
  GradStats s = GradStats::zeros(3);
  RenderGrads g;
  g.d_positions = MatX::Zero(3, 3);
  g.d_positions.row(0) << 3.0, 0.0, 4.0;  // norm 5
  g.d_positions.row(1) << 1.0, 0.0, 0.0;
  g.d_positions.row(2) << 0.0, 2.0, 0.0;
  accumulate(s, g, {2.5, 0.0, 1.0});
  CHECK(s.accum_pos_grad_norm[0] == doctest::Approx(5.0));
  CHECK(s.counts[0] == 1);
  CHECK(s.accum_pos_grad_norm[1] == 0.0);
  CHECK(s.counts[1] == 0);
  CHECK(s.counts[2] == 1);
  CHECK(s.max_screen_radius[0] == 2.5);
  accumulate(s, g, {1.0, 0.0, 0.5});
  CHECK(s.counts[0] == 2);
  CHECK(s.max_screen_radius[0] == 2.5);  // keeps the max
}

TEST_CASE("low-opacity splats are pruned") {
  GaussianCloud c = uniform_cloud(4, -2.0);
  c.opacity_logits[1] = -8.0;  // sigmoid ~ 3e-4, under tau_alpha
  c.opacity_logits[3] = -8.0;
  GradStats s = GradStats::zeros(4);
  DensifyConfig cfg;
  RngStream rng(1);
  DensifyReport rep;
  const GaussianCloud out =
      densify_and_prune(c, s, cfg, std::vector<char>(4, 0), rng, &rep);
  CHECK(out.size() == 2);
  CHECK(rep.n_pruned == 2);
  CHECK(rep.pruned == std::vector<int>{1, 3});
  CHECK(rep.source == std::vector<int>{0, 2});
  CHECK((out.positions.row(0) - c.positions.row(0)).norm() == 0.0);
  CHECK((out.positions.row(1) - c.positions.row(2)).norm() == 0.0);
}

TEST_CASE("small high-gradient splats are cloned, large ones split") {
  // Scene extent 1 so the clone/split boundary sits at activated scale 0.01.
  DensifyConfig cfg;
  cfg.scene_extent = 1.0;

  SUBCASE("clone keeps the parent bitwise and adds a fresh copy") {
    GaussianCloud c = uniform_cloud(3, std::log(0.005));
    GradStats s = stats_with_grad(3, {1}, 10.0 * cfg.tau_grad);
    RngStream rng(2);
    DensifyReport rep;
    const GaussianCloud out =
        densify_and_prune(c, s, cfg, std::vector<char>(3, 0), rng, &rep);
    CHECK(out.size() == 4);
    CHECK(rep.n_cloned == 1);
    CHECK(rep.n_split == 0);
    REQUIRE(rep.source.size() == 4);
    // The clone lands right after its parent.
    CHECK(rep.source == std::vector<int>{0, 1, 1, 2});
    CHECK(static_cast<bool>(rep.fresh[2]));
    CHECK(!static_cast<bool>(rep.fresh[1]));
    CHECK((out.positions.row(2) - c.positions.row(1)).norm() == 0.0);
    CHECK((out.log_scales.row(2) - c.log_scales.row(1)).norm() == 0.0);
    CHECK((out.colors.row(2) - c.colors.row(1)).norm() == 0.0);
  }

  SUBCASE("split divides scales and replaces the parent with two children") {
    GaussianCloud c = uniform_cloud(3, std::log(0.3));
    GradStats s = stats_with_grad(3, {2}, 10.0 * cfg.tau_grad);
    RngStream rng(3);
    DensifyReport rep;
    const GaussianCloud out =
        densify_and_prune(c, s, cfg, std::vector<char>(3, 0), rng, &rep);
    CHECK(rep.n_split == 1);
    CHECK(out.size() == 4);  // parent replaced by two children
    int children = 0;
    for (size_t j = 0; j < rep.source.size(); ++j) {
      if (rep.source[j] == 2) {
        ++children;
        CHECK(static_cast<bool>(rep.fresh[j]));
        const double expect = std::log(0.3) - std::log(cfg.split_factor);
        CHECK(out.log_scales(j, 0) == doctest::Approx(expect).epsilon(1e-12));
        // Children drawn from the parent's own density stay nearby: the
        // parent is isotropic with sigma 0.3, so 5 sigma bounds the draw.
        CHECK((out.positions.row(j) - c.positions.row(2)).norm() < 5 * 0.3);
      }
    }
    CHECK(children == 2);
  }
}

TEST_CASE("the gradient trigger uses the per-visit mean") {
  DensifyConfig cfg;
  GaussianCloud c = uniform_cloud(2, std::log(0.005));
  GradStats s = GradStats::zeros(2);
  // High accumulated total but many visits: mean under threshold.
  s.accum_pos_grad_norm[0] = cfg.tau_grad * 10.0;
  s.counts[0] = 100;
  s.max_screen_radius[0] = 1.0;
  RngStream rng(4);
  DensifyReport rep;
  const GaussianCloud out = densify_and_prune(c, s, cfg, std::vector<char>(2, 0), rng, &rep);
  CHECK(out.size() == 2);
  CHECK(rep.identity());
}

TEST_CASE("frozen splats are immutable and never densified") {
  DensifyConfig cfg;
  GaussianCloud c = uniform_cloud(4, std::log(0.005));
  c.opacity_logits[0] = -9.0;  // prunable, but frozen
  GradStats s = stats_with_grad(4, {0, 1}, 10.0 * cfg.tau_grad);
  std::vector<char> frozen = {1, 1, 0, 0};
  RngStream rng(5);
  DensifyReport rep;
  const GaussianCloud out = densify_and_prune(c, s, cfg, frozen, rng, &rep);
  // Frozen rows 0 and 1 survive bitwise, even below the opacity floor and
  // even with a hot gradient; nothing is cloned off them.
  REQUIRE(out.size() >= 2);
  CHECK((out.positions.row(0) - c.positions.row(0)).norm() == 0.0);
  CHECK((out.opacity_logits[0]) == c.opacity_logits[0]);
  CHECK((out.positions.row(1) - c.positions.row(1)).norm() == 0.0);
  for (size_t j = 0; j < rep.source.size(); ++j) {
    if (static_cast<bool>(rep.fresh[j])) CHECK(rep.source[j] != 0);
    if (static_cast<bool>(rep.fresh[j])) CHECK(rep.source[j] != 1);
  }
}

TEST_CASE("motion growth matches the split/clone mechanics on hot unfrozen rows") {
  DensifyConfig cfg;
  cfg.tau_alpha = 1e-2;
  GaussianCloud c = uniform_cloud(5, std::log(0.005));
  GradStats s = stats_with_grad(5, {3, 4}, 10.0 * cfg.tau_grad);
  std::vector<char> frozen = {1, 1, 1, 0, 0};
  RngStream rng(6);
  DensifyReport rep;
  const GaussianCloud out = motion_growth_pass(c, s, cfg, frozen, rng, &rep);
  CHECK(rep.n_cloned == 2);
  CHECK(out.size() == 7);
  for (int i = 0; i < 3; ++i) CHECK((out.positions.row(i) - c.positions.row(i)).norm() == 0.0);
}

TEST_CASE("report counts are consistent with the output size") {
  DensifyConfig cfg;
  GaussianCloud c = uniform_cloud(6, std::log(0.005));
  c.opacity_logits[5] = -9.0;
  GradStats s = stats_with_grad(6, {0, 2}, 10.0 * cfg.tau_grad);
  RngStream rng(7);
  DensifyReport rep;
  const GaussianCloud out = densify_and_prune(c, s, cfg, std::vector<char>(6, 0), rng, &rep);
  CHECK(out.size() == static_cast<int>(rep.source.size()));
  CHECK(out.size() == static_cast<int>(rep.fresh.size()));
  CHECK(rep.n_pruned == 1);
  CHECK(rep.n_cloned == 2);
  // 6 - 1 pruned + 2 clones = 7
  CHECK(out.size() == 7);
  for (int src : rep.source) {
    CHECK(src >= 0);
    CHECK(src < 6);
  }
}
