#include "dgs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dgs/geometry.hpp"
#include "dgs/rasterizer.hpp"
#include "json.hpp"

namespace dgs {

namespace {

double exp_decay(double start, double end, int iter, int total) {
  if (total <= 0) return start;
  const double a = std::clamp(static_cast<double>(iter) / total, 0.0, 1.0);
  return start * std::pow(end / start, a);
}

void scale_image(Image& img, double s) {
  if (s == 1.0) return;
  for (double& v : img.data) v *= s;
}

}  // namespace

double lr_schedule(LrGroup group, int iter, int total) {
  switch (group) {
    case LrGroup::kPosition:
      return exp_decay(1.6e-4, 1.6e-6, iter, total);
    case LrGroup::kScaleRot:
      return 1e-3;
    case LrGroup::kDeform:
      return exp_decay(1e-3, 1e-5, iter, total);
    case LrGroup::kPose:
      return 1e-4;
  }
  return 0.0;
}

int StagePlan::boundary(int at_scale_1) const {
  return static_cast<int>(std::lround(at_scale_1 * scale));
}

StageFlags plan_stage(int iter, const StagePlan& plan) {
  if (iter < 0) throw std::runtime_error("negative iteration");
  StageFlags f;
  if (iter < plan.warmup_end()) {
    f.stage = "warmup";
    f.optimize_gs = true;
    f.growth_enabled = true;
  } else if (iter < plan.canonical_end()) {
    f.stage = "canonical";
    f.optimize_gs = true;
    f.optimize_perframe_field = true;
    f.growth_enabled = iter < plan.growth_end();
    f.multiview_sds = iter >= plan.growth_end();
  } else if (iter < plan.motion_fit_end()) {
    f.stage = "motion_fit";
    f.optimize_temporal_field = true;
    f.frozen_canonical = true;
  } else if (iter < plan.motion_growth_end()) {
    f.stage = "motion_growth";
    f.optimize_gs = true;  // only the splats grown this stage; canonical rows stay frozen
    f.optimize_temporal_field = true;
    f.growth_enabled = true;
    f.frozen_canonical = true;
  } else if (iter < plan.total()) {
    f.stage = "joint";
    f.optimize_gs = true;
    f.optimize_temporal_field = true;
    f.multiview_sds = true;
    f.temporal_sds = true;
  } else {
    throw std::runtime_error("training complete");
  }
  return f;
}

void adam_step(MatX& params, const MatX& grads, AdamState& state, double lr, double clip,
               const std::vector<char>* frozen, const char* group_name) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw std::runtime_error(std::string("gradient shape mismatch in group ") + group_name);
  }
  if (!grads.allFinite()) {
    throw std::runtime_error(std::string("non-finite gradient in group ") + group_name);
  }
  if (state.m.size() == 0) {
    state.m = MatX::Zero(params.rows(), params.cols());
    state.v = MatX::Zero(params.rows(), params.cols());
  } else if (state.m.rows() != params.rows() || state.m.cols() != params.cols()) {
    throw std::runtime_error(std::string("optimizer state misaligned in group ") + group_name);
  }
  if (frozen && static_cast<int>(frozen->size()) != params.rows()) {
    throw std::runtime_error(std::string("frozen mask misaligned in group ") + group_name);
  }

  MatX g = grads;
  if (frozen) {
    for (int r = 0; r < g.rows(); ++r) {
      if ((*frozen)[r]) g.row(r).setZero();
    }
  }
  const double norm = std::sqrt(g.array().square().sum());
  if (clip > 0.0 && norm > clip) g *= clip / norm;

  state.step += 1;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (int r = 0; r < params.rows(); ++r) {
    if (frozen && (*frozen)[r]) continue;  // parameters and moments stay bitwise put
    state.m.row(r) = b1 * state.m.row(r) + (1.0 - b1) * g.row(r);
    state.v.row(r) =
        b2 * state.v.row(r).array() + (1.0 - b2) * g.row(r).array().square();
    const auto mhat = state.m.row(r).array() / c1;
    const auto vhat = state.v.row(r).array() / c2;
    params.row(r).array() -= lr * mhat / (vhat.sqrt() + eps);
  }
}

void adam_step(VecX& params, const VecX& grads, AdamState& state, double lr, double clip,
               const std::vector<char>* frozen, const char* group_name) {
  MatX p = params;
  adam_step(p, MatX(grads), state, lr, clip, frozen, group_name);
  params = p.col(0);
}

void remap_adam_rows(AdamState& state, const DensifyReport& report) {
  if (state.m.size() == 0) return;  // never touched, sized lazily at next step
  const int n_new = static_cast<int>(report.source.size());
  MatX m(n_new, state.m.cols()), v(n_new, state.v.cols());
  for (int j = 0; j < n_new; ++j) {
    if (report.fresh[j]) {
      m.row(j).setZero();
      v.row(j).setZero();
    } else {
      m.row(j) = state.m.row(report.source[j]);
      v.row(j) = state.v.row(report.source[j]);
    }
  }
  state.m = std::move(m);
  state.v = std::move(v);
}

std::string metrics_to_json(const MetricsRow& row) {
  nlohmann::ordered_json j;
  j["iter"] = row.iter;
  j["stage"] = row.stage;
  j["n_splats"] = row.n_splats;
  for (const auto& [key, value] : row.values) j[key] = value;
  return j.dump();
}

Trainer::Trainer(TrainingData data, RunConfig config)
    : data_(std::move(data)), cfg_(std::move(config)) {
  plan_.scale = cfg_.scale;
  if (data_.freeze_frames.empty()) throw std::runtime_error("dataset has no freeze frames");
  if (data_.freeze_frames.size() != data_.freeze_cameras.size()) {
    throw std::runtime_error("dataset cameras and frames disagree");
  }
  const int kf = static_cast<int>(data_.freeze_frames.size());
  if (data_.canonical_index < 0 || data_.canonical_index >= kf) {
    throw std::runtime_error("canonical index out of range");
  }

  extent_ = scene_extent_from_cameras(data_.freeze_cameras);
  if (extent_ < 1e-9) extent_ = 1.0;  // degenerate single-pose dataset

  std::vector<char> held(kf, 0);
  for (int h : cfg_.holdout) {
    if (h < 0 || h >= kf) throw std::runtime_error("holdout index out of range");
    held[h] = 1;
  }
  if (held[data_.canonical_index]) {
    throw std::runtime_error("canonical frame cannot be held out");
  }
  for (int k = 0; k < kf; ++k) {
    if (!held[k]) train_freeze_.push_back(k);
  }

  const int n = static_cast<int>(data_.init_positions.rows());
  if (n < 1) throw std::runtime_error("dataset has no init points");
  cloud_.positions = data_.init_positions;
  cloud_.colors = data_.init_colors.cwiseMax(0.0).cwiseMin(1.0);
  cloud_.raw_rotations = MatX::Zero(n, 4);
  cloud_.raw_rotations.col(0).setOnes();
  cloud_.opacity_logits = VecX::Constant(n, std::log(0.1 / 0.9));

  // Isotropic init scale: half the mean distance to the 3 nearest init
  // points. Point spacing bounds the size a splat needs to cover its
  // surroundings; halving it starts splats inside that bound, which shrinks
  // the slow log-scale adaptation distance on sparse clouds.
  cloud_.log_scales.resize(n, 3);
  const int knn = std::min(3, n - 1);
  for (int i = 0; i < n; ++i) {
    double s;
    if (knn < 1) {
      s = 0.1 * extent_;
    } else {
      std::vector<double> d2(n);
      for (int j = 0; j < n; ++j) {
        d2[j] = (data_.init_positions.row(j) - data_.init_positions.row(i)).squaredNorm();
      }
      d2[i] = std::numeric_limits<double>::infinity();
      std::partial_sort(d2.begin(), d2.begin() + knn, d2.end());
      double mean = 0.0;
      for (int j = 0; j < knn; ++j) mean += std::sqrt(d2[j]);
      s = 0.5 * mean / knn;
    }
    s = std::clamp(s, 1e-6 * extent_, 0.1 * extent_);
    cloud_.log_scales.row(i).setConstant(std::log(s));
  }
  cloud_.validate();

  RngStream rng_perframe = make_stream(cfg_.seed, "init-perframe");
  perframe_ = MlpField::create(cfg_.code_dim, rng_perframe);
  RngStream rng_temporal = make_stream(cfg_.seed, "init-temporal");
  temporal_ = MlpField::create(kTimeEncDim, rng_temporal);
  codes_ = MatX::Zero(kf, cfg_.code_dim);
  pose_deltas_ = MatX::Zero(kf, 6);
  frozen_.assign(n, 0);
  stats_ = GradStats::zeros(n);
  rng_data_ = make_stream(cfg_.seed, "data");
  rng_sds_ = make_stream(cfg_.seed, "sds");

  const DenoiserCaps caps{cfg_.lowres_width, cfg_.lowres_height, cfg_.sds_frames};
  if (cfg_.denoiser == "none") {
  } else if (cfg_.denoiser == "gt") {
    gt_scene_ = gen_scene(data_.spec, data_.seed);
    std::vector<Image> placeholder(caps.frames, Image(caps.width, caps.height));
    auto gt = std::make_unique<GroundTruthDenoiser>(std::move(placeholder));
    gt_denoiser_ = gt.get();
    denoiser_ = std::move(gt);
  } else if (cfg_.denoiser == "identity") {
    denoiser_ = std::make_unique<IdentityDenoiser>(caps);
  } else if (cfg_.denoiser == "blur") {
    denoiser_ = std::make_unique<BlurDenoiser>(caps);
  } else if (cfg_.denoiser.rfind("remote:", 0) == 0) {
    const std::string addr = cfg_.denoiser.substr(7);
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) {
      throw std::runtime_error("remote denoiser address must be host:port");
    }
    denoiser_ = std::make_unique<RemoteDenoiser>(addr.substr(0, colon),
                                                 std::stoi(addr.substr(colon + 1)), caps);
  } else {
    throw std::runtime_error("unknown denoiser: " + cfg_.denoiser);
  }
}

void Trainer::rebuild_knn() {
  const int n = cloud_.size();
  if (n < 2) throw std::runtime_error("rigidity graph needs at least two splats");
  const int k = std::min(cfg_.knn_k, n - 1);  // tiny test scenes cap the neighbor count
  knn_ = build_knn(cloud_.positions, k, cfg_.knn_lambda_scale / (extent_ * extent_));
  knn_built_ = true;
}

void Trainer::seed_motion_splats() {
  const int n = cloud_.size();
  std::vector<int> picks;
  for (int i = 0; i < n; ++i) {
    if (stats_.counts[i] > 0 &&
        stats_.accum_pos_grad_norm[i] / stats_.counts[i] >= cfg_.tau_grad) {
      picks.push_back(i);
    }
  }
  if (!picks.empty()) {
    const int n_new = n + static_cast<int>(picks.size());
    GaussianCloud grown;
    grown.positions.resize(n_new, 3);
    grown.raw_rotations.resize(n_new, 4);
    grown.log_scales.resize(n_new, 3);
    grown.opacity_logits.resize(n_new);
    grown.colors.resize(n_new, 3);
    grown.positions.topRows(n) = cloud_.positions;
    grown.raw_rotations.topRows(n) = cloud_.raw_rotations;
    grown.log_scales.topRows(n) = cloud_.log_scales;
    grown.opacity_logits.head(n) = cloud_.opacity_logits;
    grown.colors.topRows(n) = cloud_.colors;

    DensifyReport rep;
    rep.source.resize(n_new);
    rep.fresh.resize(n_new, 0);
    for (int i = 0; i < n; ++i) rep.source[i] = i;
    for (size_t j = 0; j < picks.size(); ++j) {
      const int dst = n + static_cast<int>(j);
      const int src = picks[j];
      grown.positions.row(dst) = cloud_.positions.row(src);
      grown.raw_rotations.row(dst) = cloud_.raw_rotations.row(src);
      grown.log_scales.row(dst) = cloud_.log_scales.row(src);
      grown.opacity_logits[dst] = cloud_.opacity_logits[src];
      grown.colors.row(dst) = cloud_.colors.row(src);
      rep.source[dst] = src;
      rep.fresh[dst] = 1;
    }
    cloud_ = std::move(grown);
    for (AdamState* st : {&ad_pos_, &ad_rot_, &ad_scale_, &ad_opa_, &ad_col_}) {
      remap_adam_rows(*st, rep);
    }
    frozen_.resize(n_new, 0);  // canonical rows keep their flags, new rows train
  }
  stats_ = GradStats::zeros(cloud_.size());
  rebuild_knn();
}

void Trainer::enter_stage_if_needed(const StageFlags& flags) {
  if (flags.stage == entered_stage_) return;
  if (flags.stage == "motion_fit") {
    frozen_.assign(cloud_.size(), 1);
    stats_ = GradStats::zeros(cloud_.size());
    rebuild_knn();
  } else if (flags.stage == "motion_growth") {
    // New splats are seeded where the motion-fit gradients piled up on the
    // frozen canonical splats.
    seed_motion_splats();
  } else if (flags.stage == "joint") {
    frozen_.assign(cloud_.size(), 0);
    if (!knn_built_) rebuild_knn();
  }
  entered_stage_ = flags.stage;
}

MetricsRow Trainer::step() {
  const StageFlags flags = plan_stage(iter_, plan_);
  enter_stage_if_needed(flags);
  MetricsRow row = (flags.stage == "warmup" || flags.stage == "canonical")
                       ? step_canonical(flags)
                       : step_motion(flags);
  row.iter = iter_;
  row.stage = flags.stage;
  row.n_splats = cloud_.size();

  double total = 0.0;
  for (const auto& [key, value] : row.values) {
    if (key.rfind("loss", 0) == 0) total += value;
  }
  if (!std::isfinite(total)) {
    throw std::runtime_error("non-finite loss at iteration " + std::to_string(iter_));
  }
  row.values["loss_total"] = total;

  const int total_iters = plan_.total();
  row.values["lr_position"] =
      exp_decay(cfg_.lr_position_start, cfg_.lr_position_end, iter_, total_iters) * extent_;
  row.values["lr_scale_rot"] = cfg_.lr_scale_rot;
  row.values["lr_deform"] =
      exp_decay(cfg_.lr_deform_start, cfg_.lr_deform_end, iter_, total_iters);
  row.values["lr_pose"] = cfg_.lr_pose;

  ++iter_;
  return row;
}

void Trainer::run_until(int end, std::ostream* log) {
  while (iter_ < end) {
    const MetricsRow row = step();
    if (log) (*log) << metrics_to_json(row) << '\n';
  }
}

MetricsRow Trainer::step_canonical(const StageFlags& flags) {
  MetricsRow row;
  const int n = cloud_.size();
  CloudGrads g;
  g.d_pos = MatX::Zero(n, 3);
  g.d_rot = MatX::Zero(n, 4);
  g.d_scale = MatX::Zero(n, 3);
  g.d_col = MatX::Zero(n, 3);
  g.d_opa = VecX::Zero(n);

  const bool use_field = flags.optimize_perframe_field && !cfg_.no_perframe_deformation;

  const int pick =
      train_freeze_[rng_data_.uniform_int(0, static_cast<int>(train_freeze_.size()) - 1)];
  const FieldCond cond{codes_.row(pick).transpose(), pick == data_.canonical_index};
  FieldCache fcache;
  DeformationOffsets off =
      use_field ? field_forward(perframe_, cloud_.positions, cond, &fcache)
                : DeformationOffsets::zeros(n);
  DeformationOffsets d_off = DeformationOffsets::zeros(n);
  bool have_off_grad = false;

  MatX d_pose;
  if (!cfg_.no_freeze_video) {
    Camera cam = data_.freeze_cameras[pick];
    if (cfg_.optimize_poses) {
      PoseDelta pd;
      pd.axis_angle = pose_deltas_.row(pick).head<3>().transpose();
      pd.dt = pose_deltas_.row(pick).tail<3>().transpose();
      cam = apply_pose_delta(cam, pd);
    }
    const GaussianCloud deformed = use_field ? apply_offsets(cloud_, off) : cloud_;
    RenderCache rc;
    const Image img = render(deformed, cam, data_.background, nullptr, &rc);
    Image dimg(img.width, img.height);
    const double loss_recon = l1_recon(img, data_.freeze_frames[pick], &dimg);
    scale_image(dimg, cfg_.w_recon);
    const RenderGrads rg = render_backward(deformed, rc, dimg);
    accumulate(stats_, rg, rc.radius_px);
    g.d_pos += rg.d_positions;
    g.d_rot += rg.d_raw_rotations;
    g.d_scale += rg.d_log_scales;
    g.d_opa += rg.d_opacity_logits;
    g.d_col += rg.d_colors;
    if (use_field) {
      d_off.dx += rg.d_positions;
      d_off.dq += rg.d_raw_rotations;
      d_off.ds += rg.d_log_scales;
      have_off_grad = true;
    }
    if (cfg_.optimize_poses) {
      d_pose = MatX::Zero(pose_deltas_.rows(), 6);
      d_pose.row(pick).head<3>() = rg.d_axis_angle.transpose();
      d_pose.row(pick).tail<3>() = rg.d_dt.transpose();
    }
    row.values["loss_recon"] = cfg_.w_recon * loss_recon;
  }

  if (use_field && !cfg_.no_small_motion && cfg_.w_small > 0.0) {
    DeformationOffsets gsm;
    const double loss_small = small_motion(off, cfg_.small_motion_include_scale, &gsm);
    d_off.dx += cfg_.w_small * gsm.dx;
    d_off.dq += cfg_.w_small * gsm.dq;
    d_off.ds += cfg_.w_small * gsm.ds;
    have_off_grad = true;
    row.values["loss_small"] = cfg_.w_small * loss_small;
  }

  if (use_field && have_off_grad) {
    const FieldGrads fg = field_backward(perframe_, cloud_.positions, cond, fcache, d_off);
    const int total_iters = plan_.total();
    const double lr =
        exp_decay(cfg_.lr_deform_start, cfg_.lr_deform_end, iter_, total_iters);
    VecX params = perframe_.flatten();
    adam_step(params, fg.d_params, ad_perframe_, lr, cfg_.grad_clip, nullptr, "perframe_field");
    perframe_.unflatten(params);
    MatX d_codes = MatX::Zero(codes_.rows(), codes_.cols());
    d_codes.row(pick) = fg.d_cond.transpose();
    adam_step(codes_, d_codes, ad_codes_, lr, cfg_.grad_clip, nullptr, "frame_codes");
    // Positions feed the field as detached inputs in the canonical stage.
  }

  if (flags.multiview_sds && denoiser_ && !cfg_.no_sds) {
    row.values["loss_sds_multiview"] = sds_multiview_step(flags, g, nullptr);
  }

  apply_gs_updates(g, flags);
  if (cfg_.optimize_poses && d_pose.size() > 0) {
    adam_step(pose_deltas_, d_pose, ad_pose_, cfg_.lr_pose, cfg_.grad_clip, nullptr,
              "pose_deltas");
  }

  if (flags.growth_enabled && cfg_.densify_interval > 0 &&
      (iter_ + 1) % cfg_.densify_interval == 0) {
    run_growth(flags);
  }
  return row;
}

MetricsRow Trainer::step_motion(const StageFlags& flags) {
  MetricsRow row;
  const int n = cloud_.size();
  CloudGrads g;
  g.d_pos = MatX::Zero(n, 3);
  g.d_rot = MatX::Zero(n, 4);
  g.d_scale = MatX::Zero(n, 3);
  g.d_col = MatX::Zero(n, 3);
  g.d_opa = VecX::Zero(n);
  VecX d_temporal = VecX::Zero(temporal_.parameter_count());

  const int tcount = static_cast<int>(data_.reference_times.size());
  if (tcount < 2) throw std::runtime_error("motion stages need at least two reference frames");
  const int j = static_cast<int>(rng_data_.uniform_int(1, tcount - 1));
  const double t = data_.reference_times[j];
  const double tp = data_.reference_times[j - 1];

  const FieldCond cond_t{encode_time(t), t == 0.0};
  const FieldCond cond_p{encode_time(tp), tp == 0.0};
  FieldCache cache_t, cache_p;
  const DeformationOffsets off_t = field_forward(temporal_, cloud_.positions, cond_t, &cache_t);
  const DeformationOffsets off_p = field_forward(temporal_, cloud_.positions, cond_p, &cache_p);
  DeformationOffsets d_t = DeformationOffsets::zeros(n);
  DeformationOffsets d_p = DeformationOffsets::zeros(n);

  const GaussianCloud deformed = apply_offsets(cloud_, off_t);
  RenderCache rc;
  const Image img = render(deformed, data_.reference_camera, data_.background, nullptr, &rc);
  Image dimg(img.width, img.height);
  const double loss_align =
      align_loss(img, data_.reference_frames[j], &dimg, cfg_.align_l1, cfg_.align_dssim);
  scale_image(dimg, cfg_.w_recon);
  const RenderGrads rg = render_backward(deformed, rc, dimg);
  accumulate(stats_, rg, rc.radius_px);
  g.d_pos += rg.d_positions;
  g.d_rot += rg.d_raw_rotations;
  g.d_scale += rg.d_log_scales;
  g.d_opa += rg.d_opacity_logits;
  g.d_col += rg.d_colors;
  d_t.dx += rg.d_positions;
  d_t.dq += rg.d_raw_rotations;
  d_t.ds += rg.d_log_scales;
  row.values["loss_align"] = cfg_.w_recon * loss_align;

  if (cfg_.w_norm > 0.0) {
    DeformationOffsets gn;
    const double loss_norm = norm_reg(off_t, &gn);
    d_t.dx += cfg_.w_norm * gn.dx;
    d_t.dq += cfg_.w_norm * gn.dq;
    d_t.ds += cfg_.w_norm * gn.ds;
    row.values["loss_norm"] = cfg_.w_norm * loss_norm;
  }
  if (cfg_.w_diff > 0.0) {
    MatX gdt, gdp;
    const double loss_diff = diff_reg(off_t.dx, off_p.dx, &gdt, &gdp);
    d_t.dx += cfg_.w_diff * gdt;
    d_p.dx += cfg_.w_diff * gdp;
    row.values["loss_diff"] = cfg_.w_diff * loss_diff;
  }

  const MatX x_t = deformed.positions;
  const MatX x_p = cloud_.positions + off_p.dx;
  const MatX q_t = deformed.raw_rotations;
  const MatX q_p = cloud_.raw_rotations + off_p.dq;
  if (cfg_.w_rigid > 0.0) {
    RigidGrads rgd;
    const double loss_rigid = rigid_reg(knn_, x_t, x_p, q_t, q_p, &rgd);
    d_t.dx += cfg_.w_rigid * rgd.d_x_t;
    d_p.dx += cfg_.w_rigid * rgd.d_x_tm1;
    d_t.dq += cfg_.w_rigid * rgd.d_q_t;
    d_p.dq += cfg_.w_rigid * rgd.d_q_tm1;
    g.d_pos += cfg_.w_rigid * (rgd.d_x_t + rgd.d_x_tm1);
    g.d_rot += cfg_.w_rigid * (rgd.d_q_t + rgd.d_q_tm1);
    row.values["loss_rigid"] = cfg_.w_rigid * loss_rigid;
  }
  if (cfg_.w_rot > 0.0) {
    RotGrads rtg;
    const double loss_rot = rot_reg(knn_, q_t, q_p, &rtg);
    d_t.dq += cfg_.w_rot * rtg.d_q_t;
    d_p.dq += cfg_.w_rot * rtg.d_q_tm1;
    g.d_rot += cfg_.w_rot * (rtg.d_q_t + rtg.d_q_tm1);
    row.values["loss_rot"] = cfg_.w_rot * loss_rot;
  }

  const bool joint = flags.stage == "joint";
  {
    const FieldGrads fg1 = field_backward(temporal_, cloud_.positions, cond_t, cache_t, d_t);
    const FieldGrads fg2 = field_backward(temporal_, cloud_.positions, cond_p, cache_p, d_p);
    d_temporal += fg1.d_params + fg2.d_params;
    if (joint) g.d_pos += fg1.d_positions + fg2.d_positions;
  }

  if ((flags.temporal_sds || flags.multiview_sds) && denoiser_ && !cfg_.no_sds) {
    const SdsMode mode = alternate_mode(flags.temporal_sds, rng_sds_);
    if (mode == SdsMode::kTemporal) {
      row.values["loss_sds_temporal"] = sds_temporal_step(g, d_temporal);
    } else {
      row.values["loss_sds_multiview"] = sds_multiview_step(flags, g, &d_temporal);
    }
  }

  {
    const int total_iters = plan_.total();
    const double lr =
        exp_decay(cfg_.lr_deform_start, cfg_.lr_deform_end, iter_, total_iters);
    VecX params = temporal_.flatten();
    adam_step(params, d_temporal, ad_temporal_, lr, cfg_.grad_clip, nullptr, "temporal_field");
    temporal_.unflatten(params);
  }
  apply_gs_updates(g, flags);

  if (flags.growth_enabled && cfg_.densify_interval > 0 &&
      (iter_ + 1) % cfg_.densify_interval == 0) {
    run_growth(flags);
  }
  return row;
}

double Trainer::sigma_now(const StageFlags& flags) {
  SdsConfig scfg;
  scfg.sigma_max = cfg_.sigma_max;
  scfg.sigma_min = cfg_.sigma_min;
  int start, end;
  if (flags.stage == "canonical") {
    start = plan_.growth_end();
    end = plan_.canonical_end();
  } else {
    start = plan_.motion_growth_end();
    end = plan_.total();
  }
  const int total = std::max(1, end - start);
  const int idx = std::clamp(iter_ - start, 0, total - 1);
  return anneal_sigma(idx, total, scfg, rng_sds_);
}

void Trainer::make_gt_targets(const std::vector<Camera>& poses, const std::vector<double>& times,
                              const LowresTransform& tf) {
  std::vector<Image> targets;
  targets.reserve(poses.size());
  for (size_t k = 0; k < poses.size(); ++k) {
    const GaussianCloud gt = cloud_at_time(*gt_scene_, times[k]);
    targets.push_back(apply_lowres_transform(render(gt, poses[k], data_.background), tf));
  }
  gt_denoiser_->set_targets(std::move(targets));
}

double Trainer::sds_multiview_step(const StageFlags& flags, CloudGrads& g, VecX* d_temporal) {
  const DenoiserCaps caps = denoiser_->caps();
  const int s = std::max(1, cfg_.sds_supersample);
  const int rw = caps.width * s, rh = caps.height * s;
  const bool joint = flags.stage == "joint";

  // Joint stage distills freeze-time clips of the deformed scene at one
  // sampled reference timestep; the canonical stage uses the undeformed cloud.
  double t_clip = 0.0;
  int cond_frame = data_.canonical_index;
  FieldCond cond{VecX(), true};
  FieldCache fcache;
  DeformationOffsets off;
  if (joint) {
    const int pick_t = static_cast<int>(
        rng_sds_.uniform_int(0, static_cast<int>(data_.reference_times.size()) - 1));
    t_clip = data_.reference_times[pick_t];
    cond = FieldCond{encode_time(t_clip), t_clip == 0.0};
    off = field_forward(temporal_, cloud_.positions, cond, &fcache);
  }
  const GaussianCloud frame_cloud = joint ? apply_offsets(cloud_, off) : cloud_;

  const Camera start_pose = joint ? data_.reference_camera.resized(rw, rh)
                                  : data_.freeze_cameras[data_.canonical_index].resized(rw, rh);
  std::vector<Camera> ends;
  ends.reserve(data_.freeze_cameras.size());
  for (const Camera& c : data_.freeze_cameras) ends.push_back(c.resized(rw, rh));

  SdsConfig scfg;
  scfg.sigma_max = cfg_.sigma_max;
  scfg.sigma_min = cfg_.sigma_min;
  scfg.pose_radius = cfg_.pose_radius_scale * extent_;
  scfg.lowres_width = caps.width;
  scfg.lowres_height = caps.height;
  scfg.clip_frames = caps.frames;

  const Vec3 target = cloud_.positions.colwise().mean().transpose();
  const std::vector<Camera> path = sample_multiview_path(ends, start_pose, target, scfg, rng_sds_);

  VideoClip clip;
  clip.poses = path;
  clip.times.assign(path.size(), t_clip);
  clip.condition_index = 0;
  std::vector<RenderCache> caches(path.size());
  clip.frames.reserve(path.size());
  for (size_t k = 0; k < path.size(); ++k) {
    clip.frames.push_back(
        render(frame_cloud, path[k], data_.background, nullptr, k > 0 ? &caches[k] : nullptr));
  }

  LowresTransform tf;
  const VideoClip low = preprocess_lowres(clip, caps.width, caps.height, rng_sds_, &tf);
  const Image& cond_src = joint ? data_.reference_frames[cond_index_of_time(t_clip)]
                                : data_.freeze_frames[cond_frame];
  const Image condition = resize_bilinear(cond_src, caps.width, caps.height);
  if (gt_denoiser_) make_gt_targets(path, clip.times, tf);

  const double sigma = sigma_now(flags);
  std::vector<Image> d_low;
  const double loss = sds_loss(low, condition, *denoiser_, sigma, rng_sds_, &d_low);

  const double w = cfg_.w_sds_multiview;
  DeformationOffsets d_off = DeformationOffsets::zeros(cloud_.size());
  for (size_t k = 1; k < path.size(); ++k) {
    scale_image(d_low[k], w);
    const Image d_full = preprocess_lowres_backward(d_low[k], tf, rw, rh);
    const RenderGrads rg = render_backward(frame_cloud, caches[k], d_full);
    g.d_pos += rg.d_positions;
    g.d_rot += rg.d_raw_rotations;
    g.d_scale += rg.d_log_scales;
    g.d_opa += rg.d_opacity_logits;
    g.d_col += rg.d_colors;
    if (joint && d_temporal) {
      d_off.dx += rg.d_positions;
      d_off.dq += rg.d_raw_rotations;
      d_off.ds += rg.d_log_scales;
    }
  }
  if (joint && d_temporal) {
    const FieldGrads fg = field_backward(temporal_, cloud_.positions, cond, fcache, d_off);
    *d_temporal += fg.d_params;
    g.d_pos += fg.d_positions;
  }
  return w * loss;
}

double Trainer::sds_temporal_step(CloudGrads& g, VecX& d_temporal) {
  const DenoiserCaps caps = denoiser_->caps();
  const int s = std::max(1, cfg_.sds_supersample);
  const int rw = caps.width * s, rh = caps.height * s;
  const Camera ref = data_.reference_camera.resized(rw, rh);

  const std::vector<double> times = sample_clip_times(caps.frames, rng_sds_);
  const int m = caps.frames;
  VideoClip clip;
  clip.poses.assign(m, ref);
  clip.times = times;
  clip.condition_index = 0;
  std::vector<RenderCache> caches(m);
  std::vector<FieldCache> fcaches(m);
  std::vector<FieldCond> conds(m);
  std::vector<GaussianCloud> clouds(m);
  clip.frames.reserve(m);
  for (int k = 0; k < m; ++k) {
    conds[k] = FieldCond{encode_time(times[k]), times[k] == 0.0};
    const DeformationOffsets off = field_forward(temporal_, cloud_.positions, conds[k], &fcaches[k]);
    clouds[k] = apply_offsets(cloud_, off);
    clip.frames.push_back(
        render(clouds[k], ref, data_.background, nullptr, k > 0 ? &caches[k] : nullptr));
  }

  LowresTransform tf;
  const VideoClip low = preprocess_lowres(clip, caps.width, caps.height, rng_sds_, &tf);
  const Image condition = resize_bilinear(data_.reference_frames[0], caps.width, caps.height);
  if (gt_denoiser_) {
    std::vector<Camera> poses(m, ref);
    make_gt_targets(poses, times, tf);
  }

  StageFlags joint_flags;
  joint_flags.stage = "joint";
  const double sigma = sigma_now(joint_flags);
  std::vector<Image> d_low;
  const double loss = sds_loss(low, condition, *denoiser_, sigma, rng_sds_, &d_low);

  const double w = cfg_.w_sds_temporal;
  for (int k = 1; k < m; ++k) {
    scale_image(d_low[k], w);
    const Image d_full = preprocess_lowres_backward(d_low[k], tf, rw, rh);
    const RenderGrads rg = render_backward(clouds[k], caches[k], d_full);
    g.d_pos += rg.d_positions;
    g.d_rot += rg.d_raw_rotations;
    g.d_scale += rg.d_log_scales;
    g.d_opa += rg.d_opacity_logits;
    g.d_col += rg.d_colors;
    DeformationOffsets d_off = DeformationOffsets::zeros(cloud_.size());
    d_off.dx = rg.d_positions;
    d_off.dq = rg.d_raw_rotations;
    d_off.ds = rg.d_log_scales;
    const FieldGrads fg = field_backward(temporal_, cloud_.positions, conds[k], fcaches[k], d_off);
    d_temporal += fg.d_params;
    g.d_pos += fg.d_positions;
  }
  return w * loss;
}

void Trainer::apply_gs_updates(CloudGrads& g, const StageFlags& flags) {
  if (!flags.optimize_gs) return;
  const int total_iters = plan_.total();
  const double lr_pos =
      exp_decay(cfg_.lr_position_start, cfg_.lr_position_end, iter_, total_iters) * extent_;
  adam_step(cloud_.positions, g.d_pos, ad_pos_, lr_pos, cfg_.grad_clip, &frozen_, "positions");
  adam_step(cloud_.raw_rotations, g.d_rot, ad_rot_, cfg_.lr_scale_rot, cfg_.grad_clip, &frozen_,
            "rotations");
  adam_step(cloud_.log_scales, g.d_scale, ad_scale_, cfg_.lr_scale_rot, cfg_.grad_clip, &frozen_,
            "scales");
  adam_step(cloud_.opacity_logits, g.d_opa, ad_opa_, cfg_.lr_opacity, cfg_.grad_clip, &frozen_,
            "opacities");
  adam_step(cloud_.colors, g.d_col, ad_col_, cfg_.lr_color, cfg_.grad_clip, &frozen_, "colors");
}

void Trainer::run_growth(const StageFlags& flags) {
  DensifyConfig dc;
  dc.tau_alpha = flags.frozen_canonical ? cfg_.tau_alpha_motion : cfg_.tau_alpha;
  dc.tau_grad = cfg_.tau_grad;
  dc.split_factor = cfg_.split_factor;
  dc.scene_extent = extent_;
  dc.interval = cfg_.densify_interval;
  DensifyReport rep;
  cloud_ = flags.frozen_canonical
               ? motion_growth_pass(cloud_, stats_, dc, frozen_, rng_data_, &rep)
               : densify_and_prune(cloud_, stats_, dc, frozen_, rng_data_, &rep);
  if (!rep.identity()) {
    for (AdamState* st : {&ad_pos_, &ad_rot_, &ad_scale_, &ad_opa_, &ad_col_}) {
      remap_adam_rows(*st, rep);
    }
    std::vector<char> frozen(rep.source.size());
    for (size_t j = 0; j < rep.source.size(); ++j) frozen[j] = frozen_[rep.source[j]];
    frozen_ = std::move(frozen);
    if (knn_built_) rebuild_knn();
  }
  stats_ = GradStats::zeros(cloud_.size());
}

int Trainer::cond_index_of_time(double t) const {
  for (size_t j = 0; j < data_.reference_times.size(); ++j) {
    if (data_.reference_times[j] == t) return static_cast<int>(j);
  }
  return 0;
}

Image Trainer::render_canonical(int freeze_index) const {
  Camera cam = data_.freeze_cameras.at(freeze_index);
  if (cfg_.optimize_poses) {
    PoseDelta pd;
    pd.axis_angle = pose_deltas_.row(freeze_index).head<3>().transpose();
    pd.dt = pose_deltas_.row(freeze_index).tail<3>().transpose();
    cam = apply_pose_delta(cam, pd);
  }
  return render(cloud_, cam, data_.background);
}

GaussianCloud Trainer::cloud_at(double t) const {
  const FieldCond cond{encode_time(t), t == 0.0};
  const DeformationOffsets off = field_forward(temporal_, cloud_.positions, cond, nullptr);
  return apply_offsets(cloud_, off);
}

Image Trainer::render_at_time(double t) const {
  return render(cloud_at(t), data_.reference_camera, data_.background);
}

double Trainer::eval_canonical_psnr(const std::vector<int>& freeze_indices) const {
  if (freeze_indices.empty()) throw std::runtime_error("no evaluation frames");
  double sum = 0.0;
  for (int k : freeze_indices) {
    sum += psnr(render_canonical(k), data_.freeze_clean.at(k));
  }
  return sum / freeze_indices.size();
}

std::vector<double> Trainer::eval_reference_psnr() const {
  std::vector<double> out;
  out.reserve(data_.reference_times.size());
  for (size_t j = 0; j < data_.reference_times.size(); ++j) {
    out.push_back(psnr(render_at_time(data_.reference_times[j]), data_.reference_frames[j]));
  }
  return out;
}

double Trainer::mean_abs_position_offset() const {
  double sum = 0.0;
  int count = 0;
  for (int k : train_freeze_) {
    if (k == data_.canonical_index) continue;
    const FieldCond cond{codes_.row(k).transpose(), false};
    const DeformationOffsets off = field_forward(perframe_, cloud_.positions, cond, nullptr);
    sum += off.dx.array().abs().mean();
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

}  // namespace dgs
