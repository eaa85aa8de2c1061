#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dgs/deformnet.hpp"
#include "dgs/finite_diff.hpp"
#include "dgs/rng.hpp"

using namespace dgs;

namespace {

MatX random_positions(int n, RngStream& rng) {
  MatX p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal();
  return p;
}

// Heads start at zero, which also zeroes every upstream gradient; perturbing
// all parameters makes the full chain observable.
MlpField trained_field(int cond_dim, RngStream& rng) {
  MlpField f = MlpField::create(cond_dim, rng);
  VecX theta = f.flatten();
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.05 * rng.normal();
  f.unflatten(theta);
  return f;
}

double probe(const DeformationOffsets& off, const DeformationOffsets& w) {
  return (off.dx.array() * w.dx.array()).sum() + (off.dq.array() * w.dq.array()).sum() +
         (off.ds.array() * w.ds.array()).sum();
}

DeformationOffsets random_weights(int n, RngStream& rng) {
  DeformationOffsets w = DeformationOffsets::zeros(n);
  for (Eigen::Index i = 0; i < w.dx.size(); ++i) w.dx.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < w.dq.size(); ++i) w.dq.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < w.ds.size(); ++i) w.ds.data()[i] = rng.normal();
  return w;
}

}  // namespace

TEST_CASE("a fresh field is the identity deformation") {
  RngStream rng(1);
  MlpField f = MlpField::create(8, rng);
  const MatX pos = random_positions(5, rng);
  FieldCond cond{VecX::Ones(8), false};
  const DeformationOffsets off = field_forward(f, pos, cond);
  CHECK(off.size() == 5);
  CHECK(off.all_zero());
}

TEST_CASE("canonical conditioning bypasses the network with exact zeros") {
  RngStream rng(2);
  MlpField f = trained_field(6, rng);
  const MatX pos = random_positions(4, rng);
  FieldCond regular{VecX::Ones(6), false};
  CHECK(!field_forward(f, pos, regular).all_zero());
  FieldCond canonical{VecX::Ones(6), true};
  FieldCache cache;
  const DeformationOffsets off = field_forward(f, pos, canonical, &cache);
  CHECK(off.all_zero());
  CHECK(cache.canonical);

  // Backward through the bypass contributes nothing anywhere.
  DeformationOffsets d_off = random_weights(4, rng);
  const FieldGrads g = field_backward(f, pos, canonical, cache, d_off);
  CHECK(g.d_params.norm() == 0.0);
  CHECK(g.d_positions.norm() == 0.0);
  CHECK(g.d_cond.norm() == 0.0);
}

TEST_CASE("parameter vector round trips") {
  RngStream rng(3);
  MlpField f = trained_field(4, rng);
  const VecX theta = f.flatten();
  CHECK(theta.size() == f.parameter_count());
  MlpField g = MlpField::create(4, rng);
  g.unflatten(theta);
  CHECK((g.flatten() - theta).norm() == 0.0);
  const MatX pos = random_positions(3, rng);
  FieldCond cond{VecX::Constant(4, 0.3), false};
  const DeformationOffsets a = field_forward(f, pos, cond);
  const DeformationOffsets b = field_forward(g, pos, cond);
  CHECK((a.dx - b.dx).norm() == 0.0);
  CHECK_THROWS_WITH(g.unflatten(VecX::Zero(10)), "parameter vector size mismatch");
}

TEST_CASE("time encoding has the documented shape") {
  const VecX e = encode_time(0.37);
  CHECK(e.size() == kTimeEncDim);
  CHECK(e[0] == 0.37);
  const double pi = 3.14159265358979323846;
  CHECK(e[1] == doctest::Approx(std::sin(pi * 0.37)));
  CHECK(e[2] == doctest::Approx(std::cos(pi * 0.37)));
}

TEST_CASE("conditioning size mismatches are rejected") {
  RngStream rng(4);
  MlpField f = MlpField::create(5, rng);
  const MatX pos = random_positions(2, rng);
  FieldCond bad{VecX::Ones(4), false};
  CHECK_THROWS(field_forward(f, pos, bad));
}

TEST_CASE("position and conditioning gradients match finite differences") {
  RngStream rng(5);
  const int cond_dim = 4, n = 3;
  MlpField f = trained_field(cond_dim, rng);
  const MatX pos = random_positions(n, rng);
  VecX cvec(cond_dim);
  for (int i = 0; i < cond_dim; ++i) cvec[i] = rng.normal();
  const FieldCond cond{cvec, false};
  const DeformationOffsets w = random_weights(n, rng);

  FieldCache cache;
  field_forward(f, pos, cond, &cache);
  const FieldGrads g = field_backward(f, pos, cond, cache, w);

  auto f_pos = [&](const VecX& v) {
    const MatX p = Eigen::Map<const MatX>(v.data(), n, 3);
    return probe(field_forward(f, p, cond), w);
  };
  VecX pos_flat = Eigen::Map<const VecX>(pos.data(), pos.size());
  VecX gpos_flat = Eigen::Map<const VecX>(g.d_positions.data(), g.d_positions.size());
  // The top encoding band oscillates at 2^9 pi per unit, so central
  // differences need a step well under its period to stay in the linear
  // regime.
  CHECK(check_gradient(f_pos, pos_flat, gpos_flat, 1e-7, 1e-5).pass_rate() == 1.0);

  auto f_cond = [&](const VecX& v) {
    return probe(field_forward(f, pos, FieldCond{v, false}), w);
  };
  CHECK(check_gradient(f_cond, cvec, g.d_cond, 1e-6, 1e-6).pass_rate() == 1.0);
}

TEST_CASE("parameter gradients match directional finite differences") {
  RngStream rng(6);
  const int cond_dim = 3, n = 2;
  MlpField f = trained_field(cond_dim, rng);
  const MatX pos = random_positions(n, rng);
  VecX cvec(cond_dim);
  for (int i = 0; i < cond_dim; ++i) cvec[i] = rng.normal();
  const FieldCond cond{cvec, false};
  const DeformationOffsets w = random_weights(n, rng);

  FieldCache cache;
  field_forward(f, pos, cond, &cache);
  const FieldGrads g = field_backward(f, pos, cond, cache, w);
  const VecX theta0 = f.flatten();

  // The parameter space is too large for per-coordinate probing; random
  // directions exercise every layer's weights at once.
  const double eps = 1e-6;
  for (int trial = 0; trial < 8; ++trial) {
    VecX dir(theta0.size());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = rng.normal();
    dir /= dir.norm();
    MlpField fp = f, fm = f;
    fp.unflatten(theta0 + eps * dir);
    fm.unflatten(theta0 - eps * dir);
    const double fd =
        (probe(field_forward(fp, pos, cond), w) - probe(field_forward(fm, pos, cond), w)) /
        (2.0 * eps);
    const double analytic = g.d_params.dot(dir);
    CHECK(std::abs(fd - analytic) <= 1e-6 * std::max({std::abs(fd), std::abs(analytic), 1e-3}));
  }
}

TEST_CASE("relu kinks sit where the cache says they do") {
  // A pre-activation exactly at zero would make finite differences disagree;
  // random inputs keep activations away from the kink, and the cached
  // pre-activations confirm it.
  RngStream rng(7);
  MlpField f = trained_field(3, rng);
  const MatX pos = random_positions(3, rng);
  FieldCond cond{VecX::Constant(3, 0.2), false};
  FieldCache cache;
  field_forward(f, pos, cond, &cache);
  REQUIRE(cache.pre.size() == static_cast<size_t>(MlpField::kHiddenLayers));
  double closest = 1e9;
  for (const auto& layer : cache.pre)
    closest = std::min(closest, layer.array().abs().minCoeff());
  CHECK(closest > 1e-12);
}
