#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dgs/camera.hpp"
#include "dgs/deformnet.hpp"
#include "dgs/image.hpp"
#include "dgs/rng.hpp"
#include "dgs/scene.hpp"
#include "dgs/types.hpp"

namespace dgs {

struct VideoClip {
  std::vector<Image> frames;
  std::vector<Camera> poses;
  std::vector<double> times;
  int condition_index = 0;
  int size() const { return static_cast<int>(frames.size()); }
};

struct DenoiserCaps {
  int width = 64;
  int height = 36;
  int frames = 16;
};

// One-step x0 prediction: given frames corrupted as clean + sigma * eps (the
// condition frame substituted uncorrupted at condition_index), return
// predicted clean frames of identical shape. Must be deterministic.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiserCaps caps() const = 0;
  virtual std::vector<Image> denoise(const std::vector<Image>& noisy, const Image& condition,
                                     double sigma, int condition_index) = 0;
};

// Returns its stored targets regardless of input. SDS against it reduces to
// plain MSE toward the targets.
class GroundTruthDenoiser : public Denoiser {
 public:
  explicit GroundTruthDenoiser(std::vector<Image> targets);
  void set_targets(std::vector<Image> targets);
  DenoiserCaps caps() const override;
  std::vector<Image> denoise(const std::vector<Image>& noisy, const Image& condition, double sigma,
                             int condition_index) override;

 private:
  std::vector<Image> targets_;
};

// Returns its input unchanged. SDS gradients against it are pure noise with
// zero mean.
class IdentityDenoiser : public Denoiser {
 public:
  explicit IdentityDenoiser(DenoiserCaps caps) : caps_(caps) {}
  DenoiserCaps caps() const override { return caps_; }
  std::vector<Image> denoise(const std::vector<Image>& noisy, const Image& condition, double sigma,
                             int condition_index) override;

 private:
  DenoiserCaps caps_;
};

// Gaussian-blurs each noisy frame (5x5, sigma 1.5, edge replication); drives
// renders toward smooth images.
class BlurDenoiser : public Denoiser {
 public:
  explicit BlurDenoiser(DenoiserCaps caps) : caps_(caps) {}
  DenoiserCaps caps() const override { return caps_; }
  std::vector<Image> denoise(const std::vector<Image>& noisy, const Image& condition, double sigma,
                             int condition_index) override;

 private:
  DenoiserCaps caps_;
};

// TCP adapter. Request and response are length-prefixed binary messages; see
// the protocol notes in sds.cpp / README.
class RemoteDenoiser : public Denoiser {
 public:
  RemoteDenoiser(std::string host, int port, DenoiserCaps caps);
  DenoiserCaps caps() const override { return caps_; }
  std::vector<Image> denoise(const std::vector<Image>& noisy, const Image& condition, double sigma,
                             int condition_index) override;

 private:
  std::string host_;
  int port_;
  DenoiserCaps caps_;
};

struct SdsConfig {
  double sigma_max = 1.0;
  double sigma_min = 0.02;
  double weight_temporal = 20.0;
  double weight_multiview = 5.0;
  double pose_radius = 0.0;  // world units; trainer sets 0.15 x scene extent
  int lowres_width = 64;
  int lowres_height = 36;
  int clip_frames = 16;
};

// Camera path for one multi-view clip: a freeze-time pose is chosen, its
// center is displaced inside a pose_radius ball and re-aimed at `target`,
// and M poses interpolate from the canonical pose (frame 0 is the canonical
// pose bit-exactly).
std::vector<Camera> sample_multiview_path(const std::vector<Camera>& freeze_poses,
                                          const Camera& canonical_pose, const Vec3& target,
                                          const SdsConfig& cfg, RngStream& rng);

// Renders the cloud along the sampled path. times are all zero.
VideoClip sample_multiview_clip(const GaussianCloud& cloud, const std::vector<Camera>& freeze_poses,
                                const Camera& canonical_pose, const Vec3& target,
                                const SdsConfig& cfg, const Vec3& background, RngStream& rng);

// M ascending times with times[0] = 0; the rest are uniform draws, sorted.
std::vector<double> sample_clip_times(int m, RngStream& rng);

// Static pose, frames rendered from the temporally deformed cloud; frame 0 is
// the undeformed canonical render.
VideoClip sample_temporal_clip(const GaussianCloud& cloud, const MlpField& temporal_field,
                               const Camera& fixed_pose, const SdsConfig& cfg,
                               const Vec3& background, RngStream& rng);

// Record of the random shift-or-crop applied before downsampling, kept so the
// gradient can be pulled back through the same transform.
struct LowresTransform {
  bool cropped = false;
  int shift_x = 0, shift_y = 0;
  int crop_x0 = 0, crop_y0 = 0;
  int factor = 1;  // area-downsample factor applied after the transform
};

// Applies a recorded transform to one full-resolution frame.
Image apply_lowres_transform(const Image& frame, const LowresTransform& tf);

// Chooses shift (up to S-1 px, edge replication) or crop-to-half with equal
// probability (S = width / target_w; crop requires even S), applies it to
// every frame, then area-downsamples to target_w x target_h.
VideoClip preprocess_lowres(const VideoClip& clip, int target_w, int target_h, RngStream& rng,
                            LowresTransform* tf_out = nullptr);

// Adjoint of the preprocessing applied to one frame's low-res gradient.
Image preprocess_lowres_backward(const Image& d_lowres, const LowresTransform& tf, int full_w,
                                 int full_h);

// Noise injection, condition substitution, one denoiser call, and the
// detached squared error sum_k |I_k - detach(x0_k)|^2 / count over
// non-condition frames (count = their total element count). d_frames[k] =
// 2 (I_k - x0_k) / count; the condition frame gets an exact zero gradient.
double sds_loss(const VideoClip& clip, const Image& condition, Denoiser& denoiser, double sigma,
                RngStream& rng, std::vector<Image>* d_frames);

// Uniform draw from [sigma_min, sigma_hi(iter)] where sigma_hi decays from
// sigma_max to sigma_min as 1 - sqrt(iter / (total - 1)).
double anneal_sigma_upper(int iter, int total_sds_iters, const SdsConfig& cfg);
double anneal_sigma(int iter, int total_sds_iters, const SdsConfig& cfg, RngStream& rng);

enum class SdsMode { kMultiView, kTemporal };

// Uniform coin flip when temporal SDS is available (joint stage); multi-view
// otherwise.
SdsMode alternate_mode(bool temporal_available, RngStream& rng);

}  // namespace dgs
