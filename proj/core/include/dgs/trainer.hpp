#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dgs/config.hpp"
#include "dgs/deformnet.hpp"
#include "dgs/densify.hpp"
#include "dgs/losses.hpp"
#include "dgs/oracle.hpp"
#include "dgs/sds.hpp"

namespace dgs {

enum class LrGroup { kPosition, kScaleRot, kDeform, kPose };

// Bare schedule values. The position group is additionally multiplied by the
// scene extent by the trainer, matching how the decay endpoints are quoted.
double lr_schedule(LrGroup group, int iter, int total);

struct StagePlan {
  double scale = 1.0;

  int boundary(int at_scale_1) const;  // rounds at_scale_1 * scale
  int warmup_end() const { return boundary(3000); }
  int growth_end() const { return boundary(15000); }
  int canonical_end() const { return boundary(20000); }
  int motion_fit_end() const { return boundary(30000); }
  int motion_growth_end() const { return boundary(35000); }
  int total() const { return boundary(40000); }
};

struct StageFlags {
  std::string stage;  // warmup | canonical | motion_fit | motion_growth | joint
  bool optimize_gs = false;
  bool optimize_perframe_field = false;
  bool optimize_temporal_field = false;
  bool growth_enabled = false;
  bool multiview_sds = false;
  bool temporal_sds = false;
  bool frozen_canonical = false;
};

// Throws "training complete" past the last boundary.
StageFlags plan_stage(int iter, const StagePlan& plan);

// Per-array Adam bookkeeping, bias-corrected, betas (0.9, 0.999), eps 1e-8.
struct AdamState {
  MatX m, v;
  long step = 0;
};

// One Adam update in place. Gradients are clipped to a global norm of
// `clip` (0 disables). Rows flagged in `frozen` keep parameters and moments
// bitwise unchanged. Throws on non-finite gradients, naming the group.
void adam_step(MatX& params, const MatX& grads, AdamState& state, double lr, double clip,
               const std::vector<char>* frozen, const char* group_name);
void adam_step(VecX& params, const VecX& grads, AdamState& state, double lr, double clip,
               const std::vector<char>* frozen, const char* group_name);

// Rebuilds moment arrays after a densification event: surviving rows carry
// their moments over, fresh rows start at zero.
void remap_adam_rows(AdamState& state, const DensifyReport& report);

// One line of the metrics log. Serialization is deterministic, so identical
// runs produce byte-identical logs.
struct MetricsRow {
  int iter = 0;
  std::string stage;
  int n_splats = 0;
  std::map<std::string, double> values;
};

std::string metrics_to_json(const MetricsRow& row);

// Reads only the config embedded in a checkpoint.
RunConfig checkpoint_config(const std::string& path);

// Owns all mutable training state and runs the stage schedule over a dataset.
class Trainer {
 public:
  Trainer(TrainingData data, RunConfig config);

  // One optimization step at the current iteration; advances the counter.
  MetricsRow step();

  // Steps until `end` (exclusive), appending metrics to `log` when non-null.
  void run_until(int end, std::ostream* log);

  int iter() const { return iter_; }
  const StagePlan& plan() const { return plan_; }
  const GaussianCloud& cloud() const { return cloud_; }
  const TrainingData& data() const { return data_; }
  const RunConfig& config() const { return cfg_; }
  double scene_extent() const { return extent_; }

  // Renders the canonical cloud (no deformation) at a freeze camera, with the
  // frame's learned pose correction when pose optimization is on.
  Image render_canonical(int freeze_index) const;
  // Renders through the temporal field at time t from the reference camera.
  Image render_at_time(double t) const;
  // Cloud with temporal offsets at time t applied (canonical at t = 0).
  GaussianCloud cloud_at(double t) const;

  // Mean held-out PSNR of canonical renders against the consistent frames.
  double eval_canonical_psnr(const std::vector<int>& freeze_indices) const;
  // Per-timestep reference-view PSNR through the temporal field.
  std::vector<double> eval_reference_psnr() const;
  // Mean absolute per-frame position offset over non-canonical training
  // frames; the overfitting statistic for the small-motion ablation.
  double mean_abs_position_offset() const;

  // Checkpoint container (see checkpoint.cpp for the byte layout). Loading
  // uses the embedded config unless an override is supplied; array shapes
  // must stay compatible with the override.
  void save_checkpoint(const std::string& path) const;
  static Trainer load_checkpoint(const std::string& path, TrainingData data,
                                 const RunConfig* override_config = nullptr);

  // Exposed for tests and the checkpoint codec.
  GaussianCloud cloud_;
  MlpField perframe_;
  MlpField temporal_;
  MatX codes_;        // K x code_dim
  MatX pose_deltas_;  // K x 6 (axis_angle, dt)
  std::vector<char> frozen_;
  KnnGraph knn_;
  bool knn_built_ = false;
  GradStats stats_;
  AdamState ad_pos_, ad_rot_, ad_scale_, ad_opa_, ad_col_;
  AdamState ad_perframe_, ad_temporal_, ad_codes_, ad_pose_;
  RngStream rng_data_, rng_sds_;
  int iter_ = 0;

 private:
  struct CloudGrads {
    MatX d_pos, d_rot, d_scale, d_col;
    VecX d_opa;
  };

  void enter_stage_if_needed(const StageFlags& flags);
  MetricsRow step_canonical(const StageFlags& flags);
  MetricsRow step_motion(const StageFlags& flags);
  double sds_multiview_step(const StageFlags& flags, CloudGrads& grads, VecX* d_temporal);
  double sds_temporal_step(CloudGrads& grads, VecX& d_temporal);
  void apply_gs_updates(CloudGrads& grads, const StageFlags& flags);
  void run_growth(const StageFlags& flags);
  void seed_motion_splats();
  void rebuild_knn();
  void make_gt_targets(const std::vector<Camera>& poses, const std::vector<double>& times,
                       const LowresTransform& tf);
  double sigma_now(const StageFlags& flags);
  int cond_index_of_time(double t) const;

  TrainingData data_;
  RunConfig cfg_;
  StagePlan plan_;
  double extent_ = 1.0;
  std::vector<int> train_freeze_;  // freeze-frame indices minus holdout
  std::unique_ptr<Denoiser> denoiser_;
  GroundTruthDenoiser* gt_denoiser_ = nullptr;  // set when cfg.denoiser == "gt"
  std::optional<SyntheticScene> gt_scene_;
  std::string entered_stage_;
};

}  // namespace dgs
