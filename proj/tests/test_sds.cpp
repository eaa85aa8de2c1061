#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dgs/losses.hpp"
#include "dgs/rng.hpp"
#include "dgs/sds.hpp"

using namespace dgs;

namespace {

Image random_image(int w, int h, RngStream& rng) {
  Image img(w, h);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

std::vector<Image> random_frames(int m, int w, int h, RngStream& rng) {
  std::vector<Image> out;
  for (int i = 0; i < m; ++i) out.push_back(random_image(w, h, rng));
  return out;
}

VideoClip make_clip(int m, int w, int h, RngStream& rng) {
  VideoClip clip;
  clip.frames = random_frames(m, w, h, rng);
  clip.times.assign(m, 0.0);
  clip.condition_index = 0;
  return clip;
}

double dot(const Image& a, const Image& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

Camera arc_cam(double angle) {
  const Vec3 eye(3.0 * std::sin(angle), 0.3, -3.0 * std::cos(angle));
  return look_at(eye, Vec3::Zero(), Vec3(0, -1, 0), 50.0, 50.0, 48, 32);
}

}  // namespace

TEST_CASE("ground-truth denoiser ignores its input") {
  RngStream rng(1);
  auto targets = random_frames(3, 8, 6, rng);
  GroundTruthDenoiser den(targets);
  auto noisy = random_frames(3, 8, 6, rng);
  const auto out = den.denoise(noisy, noisy[0], 0.7, 0);
  REQUIRE(out.size() == 3);
  for (int k = 0; k < 3; ++k) CHECK(out[k].data == targets[k].data);
  CHECK_THROWS(GroundTruthDenoiser({}));
}

TEST_CASE("sds against the ground-truth denoiser is plain mse toward the targets") {
  RngStream rng(2);
  const int m = 4, w = 8, h = 6;
  VideoClip clip = make_clip(m, w, h, rng);
  auto targets = random_frames(m, w, h, rng);
  GroundTruthDenoiser den(targets);
  std::vector<Image> d_frames;
  RngStream noise(3);
  const double loss = sds_loss(clip, clip.frames[0], den, 0.5, noise, &d_frames);

  const double count = (m - 1) * w * h * 3.0;
  double expect = 0.0;
  for (int k = 1; k < m; ++k)
    for (size_t i = 0; i < clip.frames[k].data.size(); ++i) {
      const double r = clip.frames[k].data[i] - targets[k].data[i];
      expect += r * r;
    }
  expect /= count;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

  REQUIRE(d_frames.size() == static_cast<size_t>(m));
  for (size_t i = 0; i < d_frames[0].data.size(); ++i) CHECK(d_frames[0].data[i] == 0.0);
  for (int k = 1; k < m; ++k)
    for (size_t i = 0; i < d_frames[k].data.size(); ++i) {
      const double expect_g = 2.0 * (clip.frames[k].data[i] - targets[k].data[i]) / count;
      CHECK(d_frames[k].data[i] == doctest::Approx(expect_g).epsilon(1e-10));
    }
}

TEST_CASE("identity denoiser yields zero-mean gradients") {
  RngStream rng(4);
  const int m = 3, w = 6, h = 4;
  VideoClip clip = make_clip(m, w, h, rng);
  IdentityDenoiser den(DenoiserCaps{w, h, m});
  const int seeds = 2000;
  // Gradient of frame 1, coordinate 0, averaged over noise draws.
  double sum = 0.0, sumsq = 0.0;
  for (int s = 0; s < seeds; ++s) {
    RngStream noise(1000 + s);
    std::vector<Image> d;
    sds_loss(clip, clip.frames[0], den, 0.8, noise, &d);
    const double g = d[1].data[0];
    sum += g;
    sumsq += g * g;
  }
  const double mean = sum / seeds;
  const double var = sumsq / seeds - mean * mean;
  const double se = std::sqrt(var / seeds);
  CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("blur denoiser preserves constants and smooths noise") {
  RngStream rng(5);
  BlurDenoiser den(DenoiserCaps{10, 8, 2});
  Image flat(10, 8);
  flat.fill(0.4, 0.5, 0.6);
  const auto out = den.denoise({flat, flat}, flat, 0.3, 0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 10; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(out[0].at(x, y, c) == doctest::Approx(flat.at(x, y, c)).epsilon(1e-9));

  const Image noisy = random_image(10, 8, rng);
  const auto smooth = den.denoise({noisy}, noisy, 0.3, -1);
  double var_in = 0.0, var_out = 0.0, mean_in = 0.0, mean_out = 0.0;
  for (double v : noisy.data) mean_in += v;
  for (double v : smooth[0].data) mean_out += v;
  mean_in /= noisy.data.size();
  mean_out /= smooth[0].data.size();
  for (double v : noisy.data) var_in += (v - mean_in) * (v - mean_in);
  for (double v : smooth[0].data) var_out += (v - mean_out) * (v - mean_out);
  CHECK(var_out < var_in);
}

TEST_CASE("remote denoiser reports connection failures") {
  RemoteDenoiser den("127.0.0.1", 9, DenoiserCaps{4, 4, 2});  // discard port, nothing listens
  RngStream rng(6);
  auto frames = random_frames(2, 4, 4, rng);
  CHECK_THROWS(den.denoise(frames, frames[0], 0.5, 0));
}

TEST_CASE("clip times start at zero and ascend") {
  RngStream rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto times = sample_clip_times(9, rng);
    REQUIRE(times.size() == 9);
    CHECK(times[0] == 0.0);
    for (size_t i = 1; i < times.size(); ++i) {
      CHECK(times[i] >= times[i - 1]);
      CHECK(times[i] < 1.0);
    }
  }
}

TEST_CASE("multi-view path starts at the canonical pose bit-exactly") {
  RngStream rng(8);
  std::vector<Camera> freeze;
  for (int k = 0; k < 6; ++k) freeze.push_back(arc_cam(0.2 * k));
  const Camera canon = freeze[0];
  SdsConfig cfg;
  cfg.clip_frames = 5;
  cfg.pose_radius = 0.4;
  for (int trial = 0; trial < 8; ++trial) {
    const auto path = sample_multiview_path(freeze, canon, Vec3::Zero(), cfg, rng);
    REQUIRE(path.size() == 5);
    CHECK((path[0].rotation - canon.rotation).norm() == 0.0);
    CHECK((path[0].translation - canon.translation).norm() == 0.0);
    // The far end sits within pose_radius of some freeze pose center.
    double best = 1e9;
    for (const auto& f : freeze) best = std::min(best, (path[4].center() - f.center()).norm());
    CHECK(best <= cfg.pose_radius + 1e-9);
  }
}

TEST_CASE("lowres preprocessing downsamples and records its transform") {
  RngStream rng(9);
  const int full_w = 16, full_h = 8, tw = 8, th = 4;
  VideoClip clip = make_clip(3, full_w, full_h, rng);
  bool saw_crop = false, saw_shift = false;
  for (int trial = 0; trial < 24; ++trial) {
    LowresTransform tf;
    const VideoClip low = preprocess_lowres(clip, tw, th, rng, &tf);
    REQUIRE(low.frames.size() == 3);
    CHECK(low.frames[0].width == tw);
    CHECK(low.frames[0].height == th);
    saw_crop = saw_crop || tf.cropped;
    saw_shift = saw_shift || (!tf.cropped && (tf.shift_x != 0 || tf.shift_y != 0));
    for (int k = 0; k < 3; ++k) {
      const Image redo = apply_lowres_transform(clip.frames[k], tf);
      CHECK(redo.data == low.frames[k].data);
    }
  }
  CHECK(saw_crop);
  CHECK(saw_shift);
}

TEST_CASE("lowres backward is the adjoint of the recorded forward") {
  RngStream rng(10);
  const int full_w = 16, full_h = 8, tw = 8, th = 4;
  VideoClip clip = make_clip(1, full_w, full_h, rng);
  for (int trial = 0; trial < 10; ++trial) {
    LowresTransform tf;
    const VideoClip low = preprocess_lowres(clip, tw, th, rng, &tf);
    const Image y = random_image(tw, th, rng);
    const Image xt = preprocess_lowres_backward(y, tf, full_w, full_h);
    const Image x = random_image(full_w, full_h, rng);
    const Image px = apply_lowres_transform(x, tf);
    CHECK(dot(px, y) == doctest::Approx(dot(x, xt)).epsilon(1e-11));
  }
}

TEST_CASE("noise level annealing narrows toward sigma_min") {
  SdsConfig cfg;
  cfg.sigma_max = 1.0;
  cfg.sigma_min = 0.02;
  CHECK(anneal_sigma_upper(0, 100, cfg) == doctest::Approx(1.0));
  CHECK(anneal_sigma_upper(99, 100, cfg) == doctest::Approx(0.02).epsilon(1e-9));
  double prev = 2.0;
  for (int it = 0; it < 100; it += 10) {
    const double hi = anneal_sigma_upper(it, 100, cfg);
    CHECK(hi <= prev);
    prev = hi;
  }
  RngStream rng(11);
  for (int it : {0, 50, 99}) {
    for (int trial = 0; trial < 20; ++trial) {
      const double s = anneal_sigma(it, 100, cfg, rng);
      CHECK(s >= cfg.sigma_min - 1e-12);
      CHECK(s <= anneal_sigma_upper(it, 100, cfg) + 1e-12);
    }
  }
}

TEST_CASE("mode alternation uses both modes only when temporal is available") {
  RngStream rng(12);
  bool saw_temporal = false, saw_multiview = false;
  for (int i = 0; i < 50; ++i) {
    const SdsMode m = alternate_mode(true, rng);
    saw_temporal = saw_temporal || (m == SdsMode::kTemporal);
    saw_multiview = saw_multiview || (m == SdsMode::kMultiView);
  }
  CHECK(saw_temporal);
  CHECK(saw_multiview);
  for (int i = 0; i < 20; ++i) CHECK(alternate_mode(false, rng) == SdsMode::kMultiView);
}

TEST_CASE("sds loss detaches the prediction") {
  // With a denoiser that returns half the render, the gradient must treat
  // the prediction as constant: d/dI |I - x0|^2 = 2 (I - x0), not scaled by
  // d(x0)/dI. The ground-truth denoiser test already pins the general form;
  // here the identity denoiser at sigma 0 gives x0 = I exactly, so the
  // residual and gradient collapse to zero.
  RngStream rng(13);
  VideoClip clip = make_clip(3, 6, 4, rng);
  IdentityDenoiser den(DenoiserCaps{6, 4, 3});
  std::vector<Image> d;
  RngStream noise(14);
  const double loss = sds_loss(clip, clip.frames[0], den, 0.0, noise, &d);
  CHECK(loss == doctest::Approx(0.0));
  for (int k = 0; k < 3; ++k)
    for (double v : d[k].data) CHECK(v == 0.0);
}
