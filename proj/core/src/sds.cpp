#include "dgs/sds.hpp"

#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>

#include "dgs/rasterizer.hpp"

namespace dgs {

GroundTruthDenoiser::GroundTruthDenoiser(std::vector<Image> targets) {
  set_targets(std::move(targets));
}

void GroundTruthDenoiser::set_targets(std::vector<Image> targets) {
  if (targets.empty()) throw std::runtime_error("ground-truth denoiser needs targets");
  targets_ = std::move(targets);
}

DenoiserCaps GroundTruthDenoiser::caps() const {
  return {targets_[0].width, targets_[0].height, static_cast<int>(targets_.size())};
}

std::vector<Image> GroundTruthDenoiser::denoise(const std::vector<Image>& noisy, const Image&,
                                                double, int) {
  if (noisy.size() != targets_.size()) throw std::runtime_error("frame count mismatch");
  return targets_;
}

std::vector<Image> IdentityDenoiser::denoise(const std::vector<Image>& noisy, const Image&, double,
                                             int) {
  return noisy;
}

namespace {

Image gaussian_blur5(const Image& img) {
  static const std::array<double, 5> k = [] {
    std::array<double, 5> v{};
    double total = 0.0;
    for (int i = -2; i <= 2; ++i) {
      v[i + 2] = std::exp(-i * i / (2.0 * 1.5 * 1.5));
      total += v[i + 2];
    }
    for (double& x : v) x /= total;
    return v;
  }();
  Image tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -2; i <= 2; ++i) {
          acc += k[i + 2] * img.at(std::clamp(x + i, 0, img.width - 1), y, c);
        }
        tmp.at(x, y, c) = acc;
      }
    }
  }
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -2; i <= 2; ++i) {
          acc += k[i + 2] * tmp.at(x, std::clamp(y + i, 0, img.height - 1), c);
        }
        out.at(x, y, c) = acc;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<Image> BlurDenoiser::denoise(const std::vector<Image>& noisy, const Image&, double,
                                         int) {
  std::vector<Image> out;
  out.reserve(noisy.size());
  for (const Image& f : noisy) out.push_back(gaussian_blur5(f));
  return out;
}

// Remote protocol, little-endian throughout. Request and response are each a
// u32 payload byte count followed by the payload.
//   request payload:  u32 M, u32 H, u32 W, f32 sigma, u32 condition_index,
//                     M*H*W*3 f32 pixels (frame-major, rows top to bottom,
//                     RGB interleaved; the condition frame is already
//                     substituted at condition_index)
//   response payload: M*H*W*3 f32 predicted clean pixels, same layout
namespace {

void write_all(int fd, const void* buf, size_t n) {
  const char* p = static_cast<const char*>(buf);
  while (n > 0) {
    const ssize_t w = ::write(fd, p, n);
    if (w <= 0) throw std::runtime_error("remote denoiser: socket write failed");
    p += w;
    n -= static_cast<size_t>(w);
  }
}

void read_all(int fd, void* buf, size_t n) {
  char* p = static_cast<char*>(buf);
  while (n > 0) {
    const ssize_t r = ::read(fd, p, n);
    if (r <= 0) throw std::runtime_error("remote denoiser: socket read failed");
    p += r;
    n -= static_cast<size_t>(r);
  }
}

void push_u32(std::vector<char>& buf, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.insert(buf.end(), b, b + 4);
}

void push_f32(std::vector<char>& buf, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.insert(buf.end(), b, b + 4);
}

}  // namespace

RemoteDenoiser::RemoteDenoiser(std::string host, int port, DenoiserCaps caps)
    : host_(std::move(host)), port_(port), caps_(caps) {}

std::vector<Image> RemoteDenoiser::denoise(const std::vector<Image>& noisy, const Image&,
                                           double sigma, int condition_index) {
  const int m = static_cast<int>(noisy.size());
  const int h = noisy[0].height, w = noisy[0].width;

  std::vector<char> payload;
  payload.reserve(20 + static_cast<size_t>(m) * h * w * 3 * 4);
  push_u32(payload, static_cast<uint32_t>(m));
  push_u32(payload, static_cast<uint32_t>(h));
  push_u32(payload, static_cast<uint32_t>(w));
  push_f32(payload, static_cast<float>(sigma));
  push_u32(payload, static_cast<uint32_t>(condition_index));
  for (const Image& f : noisy) {
    for (double v : f.data) push_f32(payload, static_cast<float>(v));
  }

  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_str = std::to_string(port_);
  if (getaddrinfo(host_.c_str(), port_str.c_str(), &hints, &res) != 0 || !res) {
    throw std::runtime_error("remote denoiser: cannot resolve " + host_);
  }
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  freeaddrinfo(res);
  if (fd < 0) {
    throw std::runtime_error("remote denoiser: cannot connect to " + host_ + ":" + port_str);
  }

  try {
    const uint32_t len = static_cast<uint32_t>(payload.size());
    write_all(fd, &len, 4);
    write_all(fd, payload.data(), payload.size());

    uint32_t rlen = 0;
    read_all(fd, &rlen, 4);
    const size_t expect = static_cast<size_t>(m) * h * w * 3 * 4;
    if (rlen != expect) throw std::runtime_error("remote denoiser: unexpected response size");
    std::vector<float> flat(expect / 4);
    read_all(fd, flat.data(), expect);
    ::close(fd);

    std::vector<Image> out(m, Image(w, h));
    size_t at = 0;
    for (Image& f : out) {
      for (double& v : f.data) v = flat[at++];
    }
    return out;
  } catch (...) {
    ::close(fd);
    throw;
  }
}

std::vector<Camera> sample_multiview_path(const std::vector<Camera>& freeze_poses,
                                          const Camera& canonical_pose, const Vec3& target,
                                          const SdsConfig& cfg, RngStream& rng) {
  if (freeze_poses.empty()) throw std::runtime_error("no freeze-time poses");
  const int pick = rng.uniform_int(0, static_cast<int>(freeze_poses.size()) - 1);
  Camera end = perturb_pose(freeze_poses[pick], target, cfg.pose_radius, rng);
  return interpolate_trajectory(canonical_pose, end, cfg.clip_frames);
}

VideoClip sample_multiview_clip(const GaussianCloud& cloud, const std::vector<Camera>& freeze_poses,
                                const Camera& canonical_pose, const Vec3& target,
                                const SdsConfig& cfg, const Vec3& background, RngStream& rng) {
  VideoClip clip;
  clip.poses = sample_multiview_path(freeze_poses, canonical_pose, target, cfg, rng);
  clip.times.assign(clip.poses.size(), 0.0);
  clip.condition_index = 0;
  clip.frames.reserve(clip.poses.size());
  for (const Camera& p : clip.poses) clip.frames.push_back(render(cloud, p, background));
  return clip;
}

std::vector<double> sample_clip_times(int m, RngStream& rng) {
  if (m < 1) throw std::runtime_error("clip needs at least one frame");
  std::vector<double> times(m, 0.0);
  for (int k = 1; k < m; ++k) times[k] = rng.uniform();
  std::sort(times.begin() + 1, times.end());
  return times;
}

VideoClip sample_temporal_clip(const GaussianCloud& cloud, const MlpField& temporal_field,
                               const Camera& fixed_pose, const SdsConfig& cfg,
                               const Vec3& background, RngStream& rng) {
  VideoClip clip;
  clip.times = sample_clip_times(cfg.clip_frames, rng);
  clip.poses.assign(cfg.clip_frames, fixed_pose);
  clip.condition_index = 0;
  clip.frames.reserve(cfg.clip_frames);
  for (double t : clip.times) {
    const FieldCond cond{encode_time(t), t == 0.0};
    const DeformationOffsets off = field_forward(temporal_field, cloud.positions, cond);
    clip.frames.push_back(render(apply_offsets(cloud, off), fixed_pose, background));
  }
  return clip;
}

VideoClip preprocess_lowres(const VideoClip& clip, int target_w, int target_h, RngStream& rng,
                            LowresTransform* tf_out) {
  if (clip.frames.empty()) throw std::runtime_error("empty clip");
  const int w = clip.frames[0].width, h = clip.frames[0].height;
  for (const Image& f : clip.frames) {
    if (f.width != w || f.height != h) throw std::runtime_error("ragged clip frames");
  }
  if (w % target_w != 0 || h % target_h != 0 || w / target_w != h / target_h) {
    throw std::runtime_error("render size incompatible with low-res target");
  }
  const int s = w / target_w;

  LowresTransform tf;
  const bool can_crop = s >= 2 && s % 2 == 0;
  if (can_crop && rng.uniform() < 0.5) {
    tf.cropped = true;
    tf.crop_x0 = rng.uniform_int(0, w / 2);
    tf.crop_y0 = rng.uniform_int(0, h / 2);
    tf.factor = s / 2;
  } else {
    tf.cropped = false;
    tf.shift_x = rng.uniform_int(-(s - 1), s - 1);
    tf.shift_y = rng.uniform_int(-(s - 1), s - 1);
    tf.factor = s;
  }

  VideoClip out;
  out.poses = clip.poses;
  out.times = clip.times;
  out.condition_index = clip.condition_index;
  out.frames.reserve(clip.frames.size());
  for (const Image& f : clip.frames) out.frames.push_back(apply_lowres_transform(f, tf));
  if (tf_out) *tf_out = tf;
  return out;
}

Image apply_lowres_transform(const Image& frame, const LowresTransform& tf) {
  if (tf.cropped) {
    return downsample_area(crop(frame, tf.crop_x0, tf.crop_y0, frame.width / 2, frame.height / 2),
                           tf.factor);
  }
  return downsample_area(shift_edge_replicate(frame, tf.shift_x, tf.shift_y), tf.factor);
}

Image preprocess_lowres_backward(const Image& d_lowres, const LowresTransform& tf, int full_w,
                                 int full_h) {
  const Image up = downsample_area_backward(d_lowres, tf.factor);
  Image out(full_w, full_h);
  if (tf.cropped) {
    for (int y = 0; y < up.height; ++y) {
      for (int x = 0; x < up.width; ++x) {
        for (int c = 0; c < 3; ++c) out.at(tf.crop_x0 + x, tf.crop_y0 + y, c) = up.at(x, y, c);
      }
    }
  } else {
    for (int y = 0; y < up.height; ++y) {
      const int sy = std::clamp(y - tf.shift_y, 0, full_h - 1);
      for (int x = 0; x < up.width; ++x) {
        const int sx = std::clamp(x - tf.shift_x, 0, full_w - 1);
        for (int c = 0; c < 3; ++c) out.at(sx, sy, c) += up.at(x, y, c);
      }
    }
  }
  return out;
}

double sds_loss(const VideoClip& clip, const Image& condition, Denoiser& denoiser, double sigma,
                RngStream& rng, std::vector<Image>* d_frames) {
  const DenoiserCaps caps = denoiser.caps();
  if (clip.size() != caps.frames) throw std::runtime_error("clip length mismatch with denoiser");
  if (condition.width != caps.width || condition.height != caps.height) {
    throw std::runtime_error("condition resolution mismatch with denoiser");
  }
  for (const Image& f : clip.frames) {
    if (f.width != caps.width || f.height != caps.height) {
      throw std::runtime_error("frame resolution mismatch with denoiser");
    }
  }
  if (clip.condition_index < 0 || clip.condition_index >= clip.size()) {
    throw std::runtime_error("condition index out of range");
  }

  std::vector<Image> noisy = clip.frames;
  for (int k = 0; k < clip.size(); ++k) {
    if (k == clip.condition_index) {
      noisy[k] = condition;
      continue;
    }
    for (double& v : noisy[k].data) v += sigma * rng.normal();
  }

  const std::vector<Image> x0 = denoiser.denoise(noisy, condition, sigma, clip.condition_index);
  if (static_cast<int>(x0.size()) != clip.size()) {
    throw std::runtime_error("denoiser returned wrong frame count");
  }

  const double count = static_cast<double>(clip.size() - 1) * condition.data.size();
  if (d_frames) d_frames->assign(clip.size(), Image(caps.width, caps.height));
  double loss = 0.0;
  for (int k = 0; k < clip.size(); ++k) {
    if (k == clip.condition_index) continue;
    const Image& pred = x0[k];
    const Image& fr = clip.frames[k];
    for (size_t i = 0; i < fr.data.size(); ++i) {
      const double d = fr.data[i] - pred.data[i];
      loss += d * d;
      if (d_frames) (*d_frames)[k].data[i] = 2.0 * d / count;
    }
  }
  return loss / count;
}

double anneal_sigma_upper(int iter, int total_sds_iters, const SdsConfig& cfg) {
  if (iter < 0 || iter >= total_sds_iters) throw std::runtime_error("sds iteration out of range");
  const double t =
      total_sds_iters > 1 ? static_cast<double>(iter) / (total_sds_iters - 1) : 1.0;
  return cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * (1.0 - std::sqrt(t));
}

double anneal_sigma(int iter, int total_sds_iters, const SdsConfig& cfg, RngStream& rng) {
  return rng.uniform(cfg.sigma_min, anneal_sigma_upper(iter, total_sds_iters, cfg));
}

SdsMode alternate_mode(bool temporal_available, RngStream& rng) {
  if (!temporal_available) return SdsMode::kMultiView;
  return rng.uniform() < 0.5 ? SdsMode::kMultiView : SdsMode::kTemporal;
}

}  // namespace dgs
