#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dgs {

// Every knob of a training run. Defaults are the published operating point;
// the schedule-fidelity tests assert them, so changing a default is an API
// break, not a tweak.
struct RunConfig {
  int schema_version = 1;
  std::uint64_t seed = 1;
  double scale = 1.0;  // stage-plan scale factor
  std::string denoiser = "none";
  double grad_clip = 10.0;
  bool optimize_poses = false;
  std::vector<int> holdout;  // freeze-frame indices excluded from training

  // loss weights
  double w_recon = 1.0;
  double w_small = 0.01;
  double w_norm = 0.01;
  double w_diff = 0.01;
  double w_rigid = 0.01;
  double w_rot = 0.01;
  double w_sds_temporal = 20.0;
  double w_sds_multiview = 5.0;
  double align_l1 = 0.8;
  double align_dssim = 0.2;
  bool small_motion_include_scale = true;

  // learning rates
  double lr_position_start = 1.6e-4;  // multiplied by scene extent at use
  double lr_position_end = 1.6e-6;
  double lr_scale_rot = 1e-3;
  double lr_deform_start = 1e-3;
  double lr_deform_end = 1e-5;
  double lr_pose = 1e-4;
  double lr_opacity = 0.05;
  double lr_color = 2.5e-3;

  // densification
  double tau_alpha = 5e-3;
  double tau_alpha_motion = 1e-2;
  double tau_grad = 2e-4;
  double split_factor = 1.6;
  int densify_interval = 100;

  // rigidity graph
  int knn_k = 20;
  double knn_lambda_scale = 2000.0;  // lambda_w = this / extent^2

  // deformation field
  int code_dim = 32;

  // score distillation
  double sigma_max = 1.0;
  double sigma_min = 0.02;
  int sds_frames = 16;
  int lowres_width = 64;
  int lowres_height = 36;
  int sds_supersample = 2;  // clips render at supersample * lowres, then shift/crop + pool
  double pose_radius_scale = 0.15;  // fraction of scene extent

  // ablation arms
  bool no_perframe_deformation = false;
  bool no_small_motion = false;
  bool no_sds = false;
  bool no_freeze_video = false;
};

// Strict parse: unknown keys anywhere in the document are an error, so typos
// fail loudly instead of silently running defaults.
RunConfig parse_config_json(const std::string& text);
RunConfig load_config(const std::string& path);

std::string config_to_json(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace dgs
