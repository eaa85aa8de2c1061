// dgs: command-line driver for the deformable gaussian splatting pipeline.
//
// Exit codes: 0 success, 1 usage error (bad flags, paths, config), 2 numerical
// failure during optimization or rendering.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dgs/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dgs;

namespace {

// Thrown by run phases; everything else maps to a usage error.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Fn>
auto run_phase(Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw NumericalFailure(e.what());
  }
}

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  double scale = 0.0;
  std::string denoiser;
  bool no_perframe_deformation = false;
  bool no_small_motion = false;
  bool no_sds = false;
  bool no_freeze_video = false;
  bool optimize_poses = false;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* scale_opt = nullptr;
  CLI::Option* denoiser_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration file (JSON)");
    seed_opt = cmd->add_option("--seed", seed, "Root RNG seed");
    scale_opt = cmd->add_option("--scale", scale, "Stage-plan scale factor");
    denoiser_opt = cmd->add_option("--denoiser", denoiser,
                                   "Denoiser backend: none|gt|identity|blur|remote:<host:port>");
    cmd->add_flag("--no-perframe-deformation", no_perframe_deformation,
                  "Ablation: disable the per-frame deformation field");
    cmd->add_flag("--no-small-motion", no_small_motion,
                  "Ablation: disable the small-motion regularizer");
    cmd->add_flag("--no-sds", no_sds, "Ablation: disable score distillation");
    cmd->add_flag("--no-freeze-video", no_freeze_video,
                  "Ablation: drop the freeze-frame reconstruction loss");
    cmd->add_flag("--optimize-poses", optimize_poses, "Optimize per-frame pose corrections");
  }

  // Flags win over the config file.
  RunConfig merge(RunConfig cfg) const {
    if (seed_opt && seed_opt->count() > 0) cfg.seed = seed;
    if (scale_opt && scale_opt->count() > 0) cfg.scale = scale;
    if (denoiser_opt && denoiser_opt->count() > 0) cfg.denoiser = denoiser;
    if (no_perframe_deformation) cfg.no_perframe_deformation = true;
    if (no_small_motion) cfg.no_small_motion = true;
    if (no_sds) cfg.no_sds = true;
    if (no_freeze_video) cfg.no_freeze_video = true;
    if (optimize_poses) cfg.optimize_poses = true;
    return cfg;
  }

  RunConfig base_config() const {
    return config_path.empty() ? RunConfig{} : load_config(config_path);
  }
};

void require_empty_or_force(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw std::runtime_error("output directory is not empty (use --force): " + dir);
  }
}

void write_manifest(const std::string& dir, const std::string& command, const RunConfig& cfg,
                    nlohmann::ordered_json extra) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
  for (auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << m.dump(2) << '\n';
}

std::string frame_name(const std::string& stem, int cam, int time) {
  std::ostringstream os;
  os << stem << "_c" << std::setw(3) << std::setfill('0') << cam << "_t" << std::setw(3)
     << std::setfill('0') << time << ".png";
  return os.str();
}

int cmd_synth(const std::string& out, std::uint64_t seed, const SceneSpec& spec, bool force) {
  require_empty_or_force(out, force);
  const SyntheticScene scene = run_phase([&] { return gen_scene(spec, seed); });
  const TrainingData data = run_phase([&] { return render_dataset(scene); });
  save_dataset(data, out);
  std::cout << "dataset written to " << out << " (" << data.freeze_frames.size()
            << " freeze frames, " << data.reference_frames.size() << " reference frames, "
            << (data.consistent ? "consistent" : "jittered") << ")\n";
  return 0;
}

// Shared tail of the two fit commands: run to `end`, checkpoint, report.
int run_fit(Trainer& trainer, const std::string& out, const std::string& command, int end,
            const std::string& dataset_dir, bool resumed) {
  fs::create_directories(out);
  const auto metrics_path = fs::path(out) / "metrics.jsonl";
  std::ofstream log(metrics_path, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write metrics: " + metrics_path.string());

  run_phase([&] {
    trainer.run_until(end, &log);
    return 0;
  });

  const std::string ckpt = (fs::path(out) / "checkpoint.dgsb").string();
  trainer.save_checkpoint(ckpt);
  export_ply(trainer.cloud(), (fs::path(out) / "canonical.ply").string());

  nlohmann::ordered_json extra;
  extra["dataset"] = dataset_dir;
  extra["iter"] = trainer.iter();
  extra["n_splats"] = trainer.cloud().size();
  if (!trainer.config().holdout.empty()) {
    extra["holdout_psnr"] =
        run_phase([&] { return trainer.eval_canonical_psnr(trainer.config().holdout); });
  }
  if (command == "fit-canonical") {
    extra["mean_position_offset"] = run_phase([&] { return trainer.mean_abs_position_offset(); });
  }
  write_manifest(out, command, trainer.config(), extra);
  std::cout << command << " finished at iteration " << trainer.iter() << ", "
            << trainer.cloud().size() << " splats, checkpoint " << ckpt << "\n";
  return 0;
}

int cmd_fit_canonical(const std::string& dataset_dir, const std::string& out,
                      const CommonFlags& flags, bool resume) {
  TrainingData data = load_dataset(dataset_dir);
  if (resume) {
    const std::string ckpt = (fs::path(out) / "checkpoint.dgsb").string();
    RunConfig cfg = flags.config_path.empty() ? checkpoint_config(ckpt) : flags.base_config();
    cfg = flags.merge(cfg);
    Trainer trainer = Trainer::load_checkpoint(ckpt, std::move(data), &cfg);
    return run_fit(trainer, out, "fit-canonical", trainer.plan().canonical_end(), dataset_dir,
                   true);
  }
  const RunConfig cfg = flags.merge(flags.base_config());
  Trainer trainer(std::move(data), cfg);
  return run_fit(trainer, out, "fit-canonical", trainer.plan().canonical_end(), dataset_dir,
                 false);
}

int cmd_fit_motion(const std::string& dataset_dir, const std::string& canonical_ckpt,
                   const std::string& out, const CommonFlags& flags, bool resume) {
  TrainingData data = load_dataset(dataset_dir);
  const std::string ckpt =
      resume ? (fs::path(out) / "checkpoint.dgsb").string() : canonical_ckpt;
  RunConfig cfg = flags.config_path.empty() ? checkpoint_config(ckpt) : flags.base_config();
  cfg = flags.merge(cfg);
  Trainer trainer = Trainer::load_checkpoint(ckpt, std::move(data), &cfg);
  if (!resume && trainer.iter() < trainer.plan().canonical_end()) {
    throw std::runtime_error("canonical checkpoint has not completed the canonical schedule");
  }
  return run_fit(trainer, out, "fit-motion", trainer.plan().total(), dataset_dir, resume);
}

int cmd_render(const std::string& dataset_dir, const std::string& ckpt, const std::string& out,
               const std::vector<double>& times, const std::string& camera_set,
               const std::string& cameras_path, bool force) {
  require_empty_or_force(out, force);
  TrainingData data = load_dataset(dataset_dir);
  const Trainer trainer = Trainer::load_checkpoint(ckpt, std::move(data));

  std::vector<Camera> cams;
  if (!cameras_path.empty()) {
    cams = load_cameras(cameras_path);
  } else if (camera_set == "reference") {
    cams = {trainer.data().reference_camera};
  } else if (camera_set == "freeze") {
    cams = trainer.data().freeze_cameras;
  } else {
    throw std::runtime_error("unknown camera set: " + camera_set);
  }
  if (times.empty()) throw std::runtime_error("no render times given");

  fs::create_directories(out);
  run_phase([&] {
    for (size_t ti = 0; ti < times.size(); ++ti) {
      const GaussianCloud cloud = trainer.cloud_at(times[ti]);
      for (size_t ci = 0; ci < cams.size(); ++ci) {
        const Image img = render(cloud, cams[ci], trainer.data().background);
        save_png(img, (fs::path(out) /
                       frame_name("render", static_cast<int>(ci), static_cast<int>(ti)))
                          .string());
      }
    }
    return 0;
  });

  nlohmann::ordered_json extra;
  extra["dataset"] = dataset_dir;
  extra["checkpoint"] = ckpt;
  extra["times"] = times;
  extra["cameras"] = cameras_path.empty() ? camera_set : cameras_path;
  write_manifest(out, "render", trainer.config(), extra);
  std::cout << times.size() * cams.size() << " frames written to " << out << "\n";
  return 0;
}

int cmd_export_ply(const std::string& dataset_dir, const std::string& ckpt, double t,
                   const std::string& out) {
  TrainingData data = load_dataset(dataset_dir);
  const Trainer trainer = Trainer::load_checkpoint(ckpt, std::move(data));
  run_phase([&] {
    export_ply(trainer.cloud_at(t), out);
    return 0;
  });
  std::cout << "splats at t=" << t << " written to " << out << "\n";
  return 0;
}

std::vector<std::string> sorted_pngs(const std::string& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

int cmd_eval(const std::string& renders_dir, const std::string& targets_dir,
             const std::string& out_path) {
  const auto renders = sorted_pngs(renders_dir);
  const auto targets = sorted_pngs(targets_dir);
  if (renders.empty()) throw std::runtime_error("no PNG frames in " + renders_dir);
  if (renders.size() != targets.size()) {
    throw std::runtime_error("frame count mismatch between renders and targets");
  }

  nlohmann::ordered_json report;
  report["n_frames"] = renders.size();
  auto frames = nlohmann::ordered_json::array();
  double sum_psnr = 0.0, sum_ssim = 0.0;
  run_phase([&] {
    for (size_t i = 0; i < renders.size(); ++i) {
      const Image a = load_png((fs::path(renders_dir) / renders[i]).string());
      const Image b = load_png((fs::path(targets_dir) / targets[i]).string());
      const double p = psnr(a, b);
      const double s = ssim(a, b);
      sum_psnr += p;
      sum_ssim += s;
      frames.push_back({{"render", renders[i]}, {"target", targets[i]}, {"psnr", p}, {"ssim", s}});
    }
    return 0;
  });
  report["frames"] = frames;
  report["mean_psnr"] = sum_psnr / renders.size();
  report["mean_ssim"] = sum_ssim / renders.size();

  const std::string text = report.dump(2);
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << text << '\n';
  }
  std::cout << text << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deformable gaussian splatting: synthetic datasets, training, rendering"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_out;
  std::uint64_t synth_seed = 1;
  SceneSpec spec;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--seed", synth_seed, "Scene generation seed");
  synth->add_option("--splats", spec.n_splats, "Ground-truth splat count");
  synth->add_option("--clusters", spec.n_clusters, "Rigid motion clusters");
  synth->add_option("--extent", spec.extent, "Scene extent (world units)");
  synth->add_option("--freeze-frames", spec.n_freeze_frames, "Freeze-time frame count");
  synth->add_option("--reference-frames", spec.n_reference_frames, "Reference video frame count");
  synth->add_option("--width", spec.width, "Frame width (px)");
  synth->add_option("--height", spec.height, "Frame height (px)");
  synth->add_option("--jitter", spec.jitter,
                    "Per-frame inconsistency amplitude (extent fraction and radians)");
  synth->add_option("--splat-scale", spec.splat_scale, "Median splat extent (extent fraction)");
  synth->add_option("--init-noise", spec.init_noise, "Init point cloud noise (extent fraction)");
  synth->add_option("--motion-translation", spec.motion_translation,
                    "Cluster drift (extent fraction over the clip)");
  synth->add_option("--motion-rotation", spec.motion_rotation,
                    "Cluster rotation rate (radians over the clip)");
  synth->add_option("--camera-distance", spec.camera_distance, "Arc radius (extent multiples)");
  synth->add_option("--arc-degrees", spec.arc_degrees, "Freeze camera arc span");
  synth->add_option("--canonical-index", spec.canonical_index, "Canonical freeze frame");
  synth->add_flag("--force", synth_force, "Overwrite a non-empty output directory");

  // fit-canonical
  auto* fitc = app.add_subcommand("fit-canonical",
                                  "Warm-up and per-frame-deformation stages on freeze frames");
  std::string fitc_dataset, fitc_out;
  bool fitc_resume = false;
  CommonFlags fitc_flags;
  fitc->add_option("--dataset", fitc_dataset, "Dataset directory")->required();
  fitc->add_option("--out", fitc_out, "Output directory")->required();
  fitc->add_flag("--resume", fitc_resume, "Continue from <out>/checkpoint.dgsb");
  fitc_flags.attach(fitc);

  // fit-motion
  auto* fitm = app.add_subcommand(
      "fit-motion", "Temporal fit, motion growth, and joint fine-tune from a canonical checkpoint");
  std::string fitm_dataset, fitm_ckpt, fitm_out;
  bool fitm_resume = false;
  CommonFlags fitm_flags;
  fitm->add_option("--dataset", fitm_dataset, "Dataset directory")->required();
  fitm->add_option("--canonical", fitm_ckpt, "Canonical checkpoint path");
  fitm->add_option("--out", fitm_out, "Output directory")->required();
  fitm->add_flag("--resume", fitm_resume, "Continue from <out>/checkpoint.dgsb");
  fitm_flags.attach(fitm);

  // render
  auto* rnd = app.add_subcommand("render", "Render a checkpoint at chosen times and cameras");
  std::string rnd_dataset, rnd_ckpt, rnd_out, rnd_camera_set = "reference", rnd_cameras;
  std::vector<double> rnd_times{0.0};
  bool rnd_force = false;
  rnd->add_option("--dataset", rnd_dataset, "Dataset directory")->required();
  rnd->add_option("--checkpoint", rnd_ckpt, "Checkpoint path")->required();
  rnd->add_option("--out", rnd_out, "Output directory")->required();
  rnd->add_option("--times", rnd_times, "Times in [0,1]")->delimiter(',');
  rnd->add_option("--camera-set", rnd_camera_set, "reference|freeze");
  rnd->add_option("--cameras", rnd_cameras, "Camera file (overrides --camera-set)");
  rnd->add_flag("--force", rnd_force, "Overwrite a non-empty output directory");

  // export-ply
  auto* exp = app.add_subcommand("export-ply", "Export the splat cloud at a time as PLY");
  std::string exp_dataset, exp_ckpt, exp_out;
  double exp_time = 0.0;
  exp->add_option("--dataset", exp_dataset, "Dataset directory")->required();
  exp->add_option("--checkpoint", exp_ckpt, "Checkpoint path")->required();
  exp->add_option("--time", exp_time, "Time in [0,1]");
  exp->add_option("--out", exp_out, "Output PLY path")->required();

  // eval
  auto* evl = app.add_subcommand("eval", "PSNR/SSIM report over paired PNG directories");
  std::string evl_renders, evl_targets, evl_out;
  evl->add_option("--renders", evl_renders, "Rendered frames directory")->required();
  evl->add_option("--targets", evl_targets, "Target frames directory")->required();
  evl->add_option("--out", evl_out, "Report path (also printed to stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_out, synth_seed, spec, synth_force);
    if (fitc->parsed()) return cmd_fit_canonical(fitc_dataset, fitc_out, fitc_flags, fitc_resume);
    if (fitm->parsed()) {
      if (!fitm_resume && fitm_ckpt.empty()) {
        throw std::runtime_error("fit-motion needs --canonical or --resume");
      }
      return cmd_fit_motion(fitm_dataset, fitm_ckpt, fitm_out, fitm_flags, fitm_resume);
    }
    if (rnd->parsed()) {
      return cmd_render(rnd_dataset, rnd_ckpt, rnd_out, rnd_times, rnd_camera_set, rnd_cameras,
                        rnd_force);
    }
    if (exp->parsed()) return cmd_export_ply(exp_dataset, exp_ckpt, exp_time, exp_out);
    if (evl->parsed()) return cmd_eval(evl_renders, evl_targets, evl_out);
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
