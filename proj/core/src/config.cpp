#include "dgs/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dgs {

namespace {

using nlohmann::ordered_json;

void check_keys(const ordered_json& obj, const std::string& prefix,
                const std::set<std::string>& allowed) {
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) {
      throw std::runtime_error("unknown config key: " + prefix + item.key());
    }
  }
}

template <typename T>
void get_if(const ordered_json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config root must be an object");

  check_keys(j, "",
             {"schema_version", "seed", "scale", "denoiser", "grad_clip", "optimize_poses",
              "holdout", "weights", "lr", "densify", "knn", "field", "sds", "ablation"});

  RunConfig c;
  get_if(j, "schema_version", c.schema_version);
  if (c.schema_version != 1) throw std::runtime_error("unsupported config schema version");
  get_if(j, "seed", c.seed);
  get_if(j, "scale", c.scale);
  get_if(j, "denoiser", c.denoiser);
  get_if(j, "grad_clip", c.grad_clip);
  get_if(j, "optimize_poses", c.optimize_poses);
  get_if(j, "holdout", c.holdout);

  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, "weights.",
               {"recon", "small_motion", "norm", "diff", "rigid", "rot", "sds_temporal",
                "sds_multiview", "align_l1", "align_dssim", "small_motion_include_scale"});
    get_if(w, "recon", c.w_recon);
    get_if(w, "small_motion", c.w_small);
    get_if(w, "norm", c.w_norm);
    get_if(w, "diff", c.w_diff);
    get_if(w, "rigid", c.w_rigid);
    get_if(w, "rot", c.w_rot);
    get_if(w, "sds_temporal", c.w_sds_temporal);
    get_if(w, "sds_multiview", c.w_sds_multiview);
    get_if(w, "align_l1", c.align_l1);
    get_if(w, "align_dssim", c.align_dssim);
    get_if(w, "small_motion_include_scale", c.small_motion_include_scale);
  }
  if (j.contains("lr")) {
    const auto& l = j.at("lr");
    check_keys(l, "lr.",
               {"position_start", "position_end", "scale_rot", "deform_start", "deform_end",
                "pose", "opacity", "color"});
    get_if(l, "position_start", c.lr_position_start);
    get_if(l, "position_end", c.lr_position_end);
    get_if(l, "scale_rot", c.lr_scale_rot);
    get_if(l, "deform_start", c.lr_deform_start);
    get_if(l, "deform_end", c.lr_deform_end);
    get_if(l, "pose", c.lr_pose);
    get_if(l, "opacity", c.lr_opacity);
    get_if(l, "color", c.lr_color);
  }
  if (j.contains("densify")) {
    const auto& d = j.at("densify");
    check_keys(d, "densify.",
               {"tau_alpha", "tau_alpha_motion", "tau_grad", "split_factor", "interval"});
    get_if(d, "tau_alpha", c.tau_alpha);
    get_if(d, "tau_alpha_motion", c.tau_alpha_motion);
    get_if(d, "tau_grad", c.tau_grad);
    get_if(d, "split_factor", c.split_factor);
    get_if(d, "interval", c.densify_interval);
  }
  if (j.contains("knn")) {
    const auto& k = j.at("knn");
    check_keys(k, "knn.", {"k", "lambda_scale"});
    get_if(k, "k", c.knn_k);
    get_if(k, "lambda_scale", c.knn_lambda_scale);
  }
  if (j.contains("field")) {
    const auto& f = j.at("field");
    check_keys(f, "field.", {"code_dim"});
    get_if(f, "code_dim", c.code_dim);
  }
  if (j.contains("sds")) {
    const auto& s = j.at("sds");
    check_keys(s, "sds.",
               {"sigma_max", "sigma_min", "frames", "lowres_width", "lowres_height", "supersample",
                "pose_radius_scale"});
    get_if(s, "sigma_max", c.sigma_max);
    get_if(s, "sigma_min", c.sigma_min);
    get_if(s, "frames", c.sds_frames);
    get_if(s, "lowres_width", c.lowres_width);
    get_if(s, "lowres_height", c.lowres_height);
    get_if(s, "supersample", c.sds_supersample);
    get_if(s, "pose_radius_scale", c.pose_radius_scale);
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    check_keys(a, "ablation.",
               {"no_perframe_deformation", "no_small_motion", "no_sds", "no_freeze_video"});
    get_if(a, "no_perframe_deformation", c.no_perframe_deformation);
    get_if(a, "no_small_motion", c.no_small_motion);
    get_if(a, "no_sds", c.no_sds);
    get_if(a, "no_freeze_video", c.no_freeze_video);
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_json(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["scale"] = c.scale;
  j["denoiser"] = c.denoiser;
  j["grad_clip"] = c.grad_clip;
  j["optimize_poses"] = c.optimize_poses;
  j["holdout"] = c.holdout;
  j["weights"] = {{"recon", c.w_recon},
                  {"small_motion", c.w_small},
                  {"norm", c.w_norm},
                  {"diff", c.w_diff},
                  {"rigid", c.w_rigid},
                  {"rot", c.w_rot},
                  {"sds_temporal", c.w_sds_temporal},
                  {"sds_multiview", c.w_sds_multiview},
                  {"align_l1", c.align_l1},
                  {"align_dssim", c.align_dssim},
                  {"small_motion_include_scale", c.small_motion_include_scale}};
  j["lr"] = {{"position_start", c.lr_position_start},
             {"position_end", c.lr_position_end},
             {"scale_rot", c.lr_scale_rot},
             {"deform_start", c.lr_deform_start},
             {"deform_end", c.lr_deform_end},
             {"pose", c.lr_pose},
             {"opacity", c.lr_opacity},
             {"color", c.lr_color}};
  j["densify"] = {{"tau_alpha", c.tau_alpha},
                  {"tau_alpha_motion", c.tau_alpha_motion},
                  {"tau_grad", c.tau_grad},
                  {"split_factor", c.split_factor},
                  {"interval", c.densify_interval}};
  j["knn"] = {{"k", c.knn_k}, {"lambda_scale", c.knn_lambda_scale}};
  j["field"] = {{"code_dim", c.code_dim}};
  j["sds"] = {{"sigma_max", c.sigma_max},
              {"sigma_min", c.sigma_min},
              {"frames", c.sds_frames},
              {"lowres_width", c.lowres_width},
              {"lowres_height", c.lowres_height},
              {"supersample", c.sds_supersample},
              {"pose_radius_scale", c.pose_radius_scale}};
  j["ablation"] = {{"no_perframe_deformation", c.no_perframe_deformation},
                   {"no_small_motion", c.no_small_motion},
                   {"no_sds", c.no_sds},
                   {"no_freeze_video", c.no_freeze_video}};
  return j.dump(2) + "\n";
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << config_to_json(cfg);
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace dgs
