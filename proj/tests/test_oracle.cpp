#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dgs/losses.hpp"
#include "dgs/oracle.hpp"
#include "dgs/rasterizer.hpp"

using namespace dgs;

namespace {

SceneSpec tiny_spec() {
  SceneSpec sp;
  sp.n_splats = 40;
  sp.n_clusters = 3;
  sp.n_freeze_frames = 5;
  sp.n_reference_frames = 4;
  sp.width = 48;
  sp.height = 32;
  sp.jitter = 0.02;
  return sp;
}

double max_image_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("scene generation is a pure function of spec and seed") {
  const SceneSpec sp = tiny_spec();
  const SyntheticScene a = gen_scene(sp, 7);
  const SyntheticScene b = gen_scene(sp, 7);
  CHECK((a.cloud.positions - b.cloud.positions).norm() == 0.0);
  CHECK((a.cloud.log_scales - b.cloud.log_scales).norm() == 0.0);
  CHECK((a.cloud.raw_rotations - b.cloud.raw_rotations).norm() == 0.0);
  CHECK(a.jitter_seed == b.jitter_seed);
  for (int c = 0; c < sp.n_clusters; ++c) {
    CHECK((a.motion[c].velocity - b.motion[c].velocity).norm() == 0.0);
  }
  const SyntheticScene other = gen_scene(sp, 8);
  CHECK((a.cloud.positions - other.cloud.positions).norm() > 0.0);
}

TEST_CASE("scene generation rejects bad specs") {
  SceneSpec sp = tiny_spec();
  sp.n_splats = 2;  // fewer than clusters
  CHECK_THROWS(gen_scene(sp, 1));
  sp = tiny_spec();
  sp.n_clusters = 0;
  CHECK_THROWS(gen_scene(sp, 1));
  sp = tiny_spec();
  sp.canonical_index = sp.n_freeze_frames;
  CHECK_THROWS(gen_scene(sp, 1));
  sp = tiny_spec();
  sp.n_freeze_frames = 0;
  CHECK_THROWS(gen_scene(sp, 1));
}

TEST_CASE("cluster motion is identity at the canonical time") {
  const SyntheticScene s = gen_scene(tiny_spec(), 3);
  const GaussianCloud at0 = cloud_at_time(s, 0.0);
  CHECK((at0.positions - s.cloud.positions).norm() == 0.0);
  CHECK((at0.raw_rotations - s.cloud.raw_rotations).norm() == 0.0);
  CHECK((at0.log_scales - s.cloud.log_scales).norm() == 0.0);

  const GaussianCloud at_half = cloud_at_time(s, 0.5);
  CHECK((at_half.positions - s.cloud.positions).norm() > 0.0);
  // Motion moves positions and rotations only.
  CHECK((at_half.log_scales - s.cloud.log_scales).norm() == 0.0);
  CHECK((at_half.colors - s.cloud.colors).norm() == 0.0);
}

TEST_CASE("ground-truth offsets reproduce the moved cloud through apply_offsets") {
  const SyntheticScene s = gen_scene(tiny_spec(), 3);
  for (const double t : {0.0, 0.3, 1.0}) {
    const DeformationOffsets off = gt_offsets(s, t);
    const GaussianCloud via_offsets = apply_offsets(s.cloud, off);
    const GaussianCloud direct = cloud_at_time(s, t);
    CHECK((via_offsets.positions - direct.positions).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((via_offsets.raw_rotations - direct.raw_rotations).cwiseAbs().maxCoeff() <= 1e-12);

    const Image a = render(via_offsets, s.reference_camera, Vec3::Zero());
    const Image b = render(direct, s.reference_camera, Vec3::Zero());
    CHECK(max_image_diff(a, b) <= 1e-6);
  }
  CHECK(gt_offsets(s, 0.0).all_zero());
}

TEST_CASE("one motionless cluster renders an unchanging reference video") {
  SceneSpec sp = tiny_spec();
  sp.n_clusters = 1;
  sp.motion_translation = 0.0;
  sp.motion_rotation = 0.0;
  sp.jitter = 0.0;
  const SyntheticScene s = gen_scene(sp, 5);
  const TrainingData d = render_dataset(s);
  for (size_t k = 1; k < d.reference_frames.size(); ++k) {
    CHECK(max_image_diff(d.reference_frames[0], d.reference_frames[k]) == 0.0);
  }
}

TEST_CASE("single-cluster motion sits in the rigidity loss nullspace") {
  SceneSpec sp = tiny_spec();
  sp.n_clusters = 1;
  const SyntheticScene s = gen_scene(sp, 9);
  const KnnGraph g = build_knn(s.cloud.positions, 5, 1.0);
  const GaussianCloud moved = cloud_at_time(s, 0.7);
  const double loss = rigid_reg(g, moved.positions, s.cloud.positions, moved.raw_rotations,
                                s.cloud.raw_rotations);
  CHECK(loss <= 1e-8);

  // Multi-cluster motion bends the space between clusters and is penalized.
  const SyntheticScene multi = gen_scene(tiny_spec(), 9);
  const KnnGraph g2 = build_knn(multi.cloud.positions, 5, 1.0);
  const GaussianCloud moved2 = cloud_at_time(multi, 0.7);
  CHECK(rigid_reg(g2, moved2.positions, multi.cloud.positions, moved2.raw_rotations,
                  multi.cloud.raw_rotations) > 1e-6);
}

TEST_CASE("jitter transforms are bounded rigid maps, identity at the canonical frame") {
  SceneSpec sp = tiny_spec();
  sp.jitter = 0.05;
  const SyntheticScene s = gen_scene(sp, 13);

  const std::vector<RigidTransform> at_canon = jitter_transforms(s, sp.canonical_index);
  for (const RigidTransform& tr : at_canon) {
    CHECK((tr.r - Mat3::Identity()).norm() == 0.0);
    CHECK(tr.t.norm() == 0.0);
  }

  for (int frame = 0; frame < sp.n_freeze_frames; ++frame) {
    const std::vector<RigidTransform> trs = jitter_transforms(s, frame);
    REQUIRE(static_cast<int>(trs.size()) == sp.n_clusters);
    for (int c = 0; c < sp.n_clusters; ++c) {
      const Mat3& r = trs[c].r;
      CHECK((r.transpose() * r - Mat3::Identity()).norm() <= 1e-12);
      CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
      // Rotation stays within the amplitude in angle.
      const double angle = std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0));
      CHECK(angle <= sp.jitter + 1e-12);
    }
  }

  // Repeated queries are deterministic.
  const std::vector<RigidTransform> again = jitter_transforms(s, 2);
  CHECK((jitter_transforms(s, 2)[0].r - again[0].r).norm() == 0.0);

  // The jittered cloud applies those transforms to member splats.
  const GaussianCloud jc = jittered_cloud(s, 2);
  const std::vector<RigidTransform> trs = jitter_transforms(s, 2);
  for (int i = 0; i < s.cloud.size(); ++i) {
    const int c = s.cluster_of[i];
    const Vec3 expect = trs[c].r * s.cloud.positions.row(i).transpose() + trs[c].t;
    CHECK((jc.positions.row(i).transpose() - expect).norm() <= 1e-12);
  }

  SceneSpec clean = tiny_spec();
  clean.jitter = 0.0;
  const SyntheticScene s0 = gen_scene(clean, 13);
  for (const RigidTransform& tr : jitter_transforms(s0, 1)) {
    CHECK((tr.r - Mat3::Identity()).norm() == 0.0);
    CHECK(tr.t.norm() == 0.0);
  }
}

TEST_CASE("dataset frames: canonical is clean, jitter only corrupts the rest") {
  const SyntheticScene s = gen_scene(tiny_spec(), 21);
  const TrainingData d = render_dataset(s);
  REQUIRE(static_cast<int>(d.freeze_frames.size()) == s.spec.n_freeze_frames);
  REQUIRE(d.freeze_clean.size() == d.freeze_frames.size());
  CHECK(!d.consistent);
  CHECK(d.canonical_index == s.spec.canonical_index);

  CHECK(max_image_diff(d.freeze_frames[d.canonical_index], d.freeze_clean[d.canonical_index]) ==
        0.0);
  int corrupted = 0;
  for (size_t k = 0; k < d.freeze_frames.size(); ++k) {
    if (max_image_diff(d.freeze_frames[k], d.freeze_clean[k]) > 0.0) ++corrupted;
  }
  CHECK(corrupted == s.spec.n_freeze_frames - 1);

  // Reference frame at t=0 equals the canonical cloud rendered at the
  // reference pose.
  const Image direct = render(s.cloud, s.reference_camera, d.background);
  CHECK(max_image_diff(d.reference_frames[0], direct) == 0.0);
  CHECK(d.reference_times[0] == 0.0);

  SceneSpec clean = tiny_spec();
  clean.jitter = 0.0;
  const TrainingData dc = render_dataset(gen_scene(clean, 21));
  CHECK(dc.consistent);
  for (size_t k = 0; k < dc.freeze_frames.size(); ++k) {
    CHECK(max_image_diff(dc.freeze_frames[k], dc.freeze_clean[k]) == 0.0);
  }
}

TEST_CASE("dataset directory roundtrip preserves everything up to 8-bit frames") {
  const SyntheticScene s = gen_scene(tiny_spec(), 33);
  const TrainingData d = render_dataset(s);
  const std::string dir = "oracle_roundtrip_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(d, dir);
  const TrainingData r = load_dataset(dir);

  CHECK(r.canonical_index == d.canonical_index);
  CHECK(r.consistent == d.consistent);
  CHECK(r.seed == d.seed);
  CHECK(r.spec.n_splats == d.spec.n_splats);
  CHECK(r.spec.jitter == d.spec.jitter);
  CHECK(r.spec.splat_scale == d.spec.splat_scale);
  CHECK((r.init_positions - d.init_positions).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((r.init_colors - d.init_colors).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(r.reference_times == d.reference_times);

  REQUIRE(r.freeze_frames.size() == d.freeze_frames.size());
  REQUIRE(r.reference_frames.size() == d.reference_frames.size());
  // PNG stores 8-bit samples; loaded values sit on the 1/255 grid within
  // half a quantum of the originals.
  for (size_t k = 0; k < d.freeze_frames.size(); ++k) {
    CHECK(max_image_diff(r.freeze_frames[k], d.freeze_frames[k]) <= 0.5 / 255.0 + 1e-12);
    CHECK(max_image_diff(r.freeze_clean[k], d.freeze_clean[k]) <= 0.5 / 255.0 + 1e-12);
  }

  // Cameras roundtrip through projection agreement.
  for (size_t k = 0; k < d.freeze_cameras.size(); ++k) {
    const Vec3 probe{0.123, -0.456, 0.789};
    double z_a = 0.0, z_b = 0.0;
    const Vec2 uv_a = d.freeze_cameras[k].project(probe, &z_a);
    const Vec2 uv_b = r.freeze_cameras[k].project(probe, &z_b);
    CHECK((uv_a - uv_b).norm() <= 1e-9);
    CHECK(std::abs(z_a - z_b) <= 1e-9);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("finite differences recover simple gradients") {
  const auto quadratic = [](const VecX& v) { return v.squaredNorm(); };
  VecX x(2);
  x << 1.0, 2.0;
  const VecX g = finite_diff(quadratic, x, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  const auto constant = [](const VecX&) { return 3.5; };
  CHECK(finite_diff(constant, x, 1e-5).cwiseAbs().maxCoeff() == 0.0);

  const auto bad = [](const VecX& v) { return std::log(v[0]); };
  VecX neg(1);
  neg << -1.0;
  CHECK_THROWS(finite_diff(bad, neg, 1e-5));
}
