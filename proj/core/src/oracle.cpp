#include "dgs/oracle.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dgs/geometry.hpp"
#include "dgs/rasterizer.hpp"
#include "json.hpp"

namespace dgs {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string frame_name(const char* stem, size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu.png", stem, k);
  return buf;
}

Vec3 random_unit(RngStream& rng) {
  Vec3 v{rng.normal(), rng.normal(), rng.normal()};
  while (v.norm() < 1e-9) v = Vec3{rng.normal(), rng.normal(), rng.normal()};
  return v.normalized();
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

SyntheticScene gen_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.n_splats < spec.n_clusters || spec.n_clusters < 1) {
    throw std::runtime_error("scene needs n_splats >= n_clusters >= 1");
  }
  SyntheticScene s;
  s.spec = spec;
  s.seed = seed;
  s.jitter_seed = derive_stream_seed(seed, "jitter");
  RngStream rng = make_stream(seed, "scene-gen");

  const int n = spec.n_splats;
  const int nc = spec.n_clusters;
  const double ext = spec.extent;

  std::vector<Vec3> centers(nc);
  for (Vec3& c : centers) {
    c = random_unit(rng) * (0.55 * ext * std::cbrt(rng.uniform()));
  }

  s.cloud.positions.resize(n, 3);
  s.cloud.raw_rotations.resize(n, 4);
  s.cloud.log_scales.resize(n, 3);
  s.cloud.opacity_logits.resize(n);
  s.cloud.colors.resize(n, 3);
  s.cluster_of.resize(n);

  const double sigma = 0.3 * ext / std::cbrt(static_cast<double>(nc));
  for (int i = 0; i < n; ++i) {
    const int c = i % nc;
    s.cluster_of[i] = c;
    Vec3 p = centers[c] + sigma * Vec3{rng.normal(), rng.normal(), rng.normal()};
    if (p.norm() > ext) p *= ext / p.norm();
    s.cloud.positions.row(i) = p.transpose();

    const Vec3 axis = random_unit(rng);
    const Quat q = axis_angle_to_quat(axis * (rng.uniform() * 2.0 * M_PI));
    s.cloud.raw_rotations.row(i) << q.w, q.x, q.y, q.z;

    for (int a = 0; a < 3; ++a) {
      s.cloud.log_scales(i, a) =
          std::log(ext * rng.uniform(0.5 * spec.splat_scale, 1.5 * spec.splat_scale));
    }
    s.cloud.opacity_logits[i] = logit(rng.uniform(0.6, 0.95));
    s.cloud.colors.row(i) << rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9);
  }
  s.cloud.validate();

  s.motion.resize(nc);
  for (int c = 0; c < nc; ++c) {
    // Centroid of the cluster's actual splats, so rotation pivots in place.
    Vec3 sum = Vec3::Zero();
    int count = 0;
    for (int i = 0; i < n; ++i) {
      if (s.cluster_of[i] == c) {
        sum += s.cloud.positions.row(i).transpose();
        ++count;
      }
    }
    ClusterMotion m;
    m.centroid = sum / count;
    m.axis = random_unit(rng);
    m.rate = spec.motion_rotation * rng.uniform(0.5, 1.0);
    m.velocity = random_unit(rng) * (spec.motion_translation * ext * rng.uniform(0.5, 1.0));
    s.motion[c] = m;
  }

  const int kf = spec.n_freeze_frames;
  if (kf < 1) throw std::runtime_error("scene needs at least one freeze frame");
  if (spec.canonical_index < 0 || spec.canonical_index >= kf) {
    throw std::runtime_error("canonical index out of range");
  }
  const double dist = spec.camera_distance * ext;
  const double fx = 1.2 * spec.width;
  const double el = 0.3;
  s.freeze_cameras.reserve(kf);
  for (int k = 0; k < kf; ++k) {
    const double az = kf > 1 ? (spec.arc_degrees * M_PI / 180.0) * k / (kf - 1) : 0.0;
    const Vec3 eye = dist * Vec3{std::cos(el) * std::sin(az), std::sin(el),
                                 std::cos(el) * std::cos(az)};
    s.freeze_cameras.push_back(
        look_at(eye, Vec3::Zero(), Vec3{0, 1, 0}, fx, fx, spec.width, spec.height));
  }
  s.reference_camera = s.freeze_cameras[spec.canonical_index];

  const int tf = spec.n_reference_frames;
  if (tf < 1) throw std::runtime_error("scene needs at least one reference frame");
  s.reference_times.resize(tf);
  for (int j = 0; j < tf; ++j) {
    s.reference_times[j] = tf > 1 ? static_cast<double>(j) / (tf - 1) : 0.0;
  }
  return s;
}

GaussianCloud cloud_at_time(const SyntheticScene& s, double t) {
  GaussianCloud out = s.cloud;
  // Exact identity at the canonical time; the pivot arithmetic below would
  // otherwise leave ulp-level residue.
  if (t == 0.0) return out;
  for (int i = 0; i < s.cloud.size(); ++i) {
    const ClusterMotion& m = s.motion[s.cluster_of[i]];
    if (m.rate == 0.0 && m.velocity.isZero()) continue;  // static cluster, stay bitwise
    const Mat3 r = axis_angle_to_rotmat(m.axis * (m.rate * t));
    const Vec3 x0 = s.cloud.positions.row(i).transpose();
    out.positions.row(i) = (r * (x0 - m.centroid) + m.centroid + m.velocity * t).transpose();
    const Quat dq = axis_angle_to_quat(m.axis * (m.rate * t));
    const Quat q = quat_mul(dq, s.cloud.rotation(i));
    out.raw_rotations.row(i) << q.w, q.x, q.y, q.z;
  }
  return out;
}

DeformationOffsets gt_offsets(const SyntheticScene& s, double t) {
  const GaussianCloud moved = cloud_at_time(s, t);
  DeformationOffsets off = DeformationOffsets::zeros(s.cloud.size());
  off.dx = moved.positions - s.cloud.positions;
  off.dq = moved.raw_rotations - s.cloud.raw_rotations;
  return off;
}

std::vector<RigidTransform> jitter_transforms(const SyntheticScene& s, int frame) {
  const int nc = s.spec.n_clusters;
  std::vector<RigidTransform> out(nc);
  if (frame == s.spec.canonical_index || s.spec.jitter == 0.0) return out;
  RngStream rng = make_stream(s.jitter_seed, "jitter-frame-" + std::to_string(frame));
  const double amp = s.spec.jitter * s.spec.extent;
  for (int c = 0; c < nc; ++c) {
    const Vec3 axis = random_unit(rng);
    const double angle = s.spec.jitter * (2.0 * rng.uniform() - 1.0);
    const Vec3 tau = random_unit(rng) * (amp * std::cbrt(rng.uniform()));
    const Mat3 r = axis_angle_to_rotmat(axis * angle);
    out[c].r = r;
    out[c].t = s.motion[c].centroid - r * s.motion[c].centroid + tau;
  }
  return out;
}

GaussianCloud jittered_cloud(const SyntheticScene& s, int frame) {
  const auto tfs = jitter_transforms(s, frame);
  GaussianCloud out = s.cloud;
  for (int i = 0; i < s.cloud.size(); ++i) {
    const RigidTransform& tf = tfs[s.cluster_of[i]];
    const Vec3 x0 = s.cloud.positions.row(i).transpose();
    out.positions.row(i) = (tf.r * x0 + tf.t).transpose();
    const Quat q = quat_mul(rotmat_to_quat(tf.r), s.cloud.rotation(i));
    out.raw_rotations.row(i) << q.w, q.x, q.y, q.z;
  }
  return out;
}

TrainingData render_dataset(const SyntheticScene& s) {
  TrainingData d;
  d.spec = s.spec;
  d.seed = s.seed;
  d.freeze_cameras = s.freeze_cameras;
  d.canonical_index = s.spec.canonical_index;
  d.reference_camera = s.reference_camera;
  d.reference_times = s.reference_times;
  d.consistent = s.spec.jitter == 0.0;
  d.background = Vec3::Zero();

  const int kf = static_cast<int>(s.freeze_cameras.size());
  d.freeze_frames.reserve(kf);
  d.freeze_clean.reserve(kf);
  for (int k = 0; k < kf; ++k) {
    d.freeze_clean.push_back(render(s.cloud, s.freeze_cameras[k], d.background));
    if (k == s.spec.canonical_index || s.spec.jitter == 0.0) {
      d.freeze_frames.push_back(d.freeze_clean.back());
    } else {
      d.freeze_frames.push_back(render(jittered_cloud(s, k), s.freeze_cameras[k], d.background));
    }
  }

  d.reference_frames.reserve(s.reference_times.size());
  for (double t : s.reference_times) {
    d.reference_frames.push_back(render(cloud_at_time(s, t), s.reference_camera, d.background));
  }

  RngStream rng = make_stream(s.seed, "init-points");
  const int n = s.cloud.size();
  d.init_positions.resize(n, 3);
  d.init_colors.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      d.init_positions(i, a) =
          s.cloud.positions(i, a) + s.spec.init_noise * s.spec.extent * rng.normal();
      d.init_colors(i, a) =
          std::min(1.0, std::max(0.0, s.cloud.colors(i, a) + 0.05 * rng.normal()));
    }
  }
  return d;
}

namespace {

ordered_json spec_to_json(const SceneSpec& sp) {
  return ordered_json{{"n_splats", sp.n_splats},
                      {"n_clusters", sp.n_clusters},
                      {"extent", sp.extent},
                      {"n_freeze_frames", sp.n_freeze_frames},
                      {"n_reference_frames", sp.n_reference_frames},
                      {"width", sp.width},
                      {"height", sp.height},
                      {"jitter", sp.jitter},
                      {"splat_scale", sp.splat_scale},
                      {"init_noise", sp.init_noise},
                      {"motion_translation", sp.motion_translation},
                      {"motion_rotation", sp.motion_rotation},
                      {"camera_distance", sp.camera_distance},
                      {"arc_degrees", sp.arc_degrees},
                      {"canonical_index", sp.canonical_index}};
}

SceneSpec spec_from_json(const ordered_json& j) {
  SceneSpec sp;
  sp.n_splats = j.at("n_splats").get<int>();
  sp.n_clusters = j.at("n_clusters").get<int>();
  sp.extent = j.at("extent").get<double>();
  sp.n_freeze_frames = j.at("n_freeze_frames").get<int>();
  sp.n_reference_frames = j.at("n_reference_frames").get<int>();
  sp.width = j.at("width").get<int>();
  sp.height = j.at("height").get<int>();
  sp.jitter = j.at("jitter").get<double>();
  sp.splat_scale = j.at("splat_scale").get<double>();
  sp.init_noise = j.at("init_noise").get<double>();
  sp.motion_translation = j.at("motion_translation").get<double>();
  sp.motion_rotation = j.at("motion_rotation").get<double>();
  sp.camera_distance = j.at("camera_distance").get<double>();
  sp.arc_degrees = j.at("arc_degrees").get<double>();
  sp.canonical_index = j.at("canonical_index").get<int>();
  return sp;
}

}  // namespace

void save_dataset(const TrainingData& data, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "freeze");
  fs::create_directories(fs::path(dir) / "reference");

  ordered_json manifest;
  manifest["schema_version"] = 1;
  manifest["seed"] = data.seed;
  manifest["consistent"] = data.consistent;
  manifest["background"] = {data.background.x(), data.background.y(), data.background.z()};
  manifest["reference_times"] = data.reference_times;
  manifest["spec"] = spec_to_json(data.spec);
  {
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("cannot open for write: " + dir + "/manifest.json");
    f << manifest.dump(2) << "\n";
  }

  save_cameras(data.freeze_cameras, (fs::path(dir) / "freeze_cameras.txt").string());
  save_cameras({data.reference_camera}, (fs::path(dir) / "reference_camera.txt").string());

  for (size_t k = 0; k < data.freeze_frames.size(); ++k) {
    save_png(data.freeze_frames[k], (fs::path(dir) / "freeze" / frame_name("frame", k)).string());
    save_png(data.freeze_clean[k], (fs::path(dir) / "freeze" / frame_name("clean", k)).string());
  }
  for (size_t j = 0; j < data.reference_frames.size(); ++j) {
    save_png(data.reference_frames[j],
             (fs::path(dir) / "reference" / frame_name("frame", j)).string());
  }

  {
    std::ofstream f(fs::path(dir) / "init_points.txt");
    if (!f) throw std::runtime_error("cannot open for write: " + dir + "/init_points.txt");
    f << "# x y z r g b\n";
    f.precision(17);
    for (int i = 0; i < data.init_positions.rows(); ++i) {
      f << data.init_positions(i, 0) << ' ' << data.init_positions(i, 1) << ' '
        << data.init_positions(i, 2) << ' ' << data.init_colors(i, 0) << ' '
        << data.init_colors(i, 1) << ' ' << data.init_colors(i, 2) << '\n';
    }
  }
}

TrainingData load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("cannot open dataset manifest in " + dir);
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(mf);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("manifest parse error: ") + e.what());
  }

  TrainingData d;
  d.seed = manifest.at("seed").get<std::uint64_t>();
  d.consistent = manifest.at("consistent").get<bool>();
  const auto bg = manifest.at("background");
  d.background = Vec3{bg.at(0).get<double>(), bg.at(1).get<double>(), bg.at(2).get<double>()};
  d.reference_times = manifest.at("reference_times").get<std::vector<double>>();
  d.spec = spec_from_json(manifest.at("spec"));
  d.canonical_index = d.spec.canonical_index;

  d.freeze_cameras = load_cameras((fs::path(dir) / "freeze_cameras.txt").string());
  d.reference_camera = load_cameras((fs::path(dir) / "reference_camera.txt").string()).at(0);

  const int kf = static_cast<int>(d.freeze_cameras.size());
  for (int k = 0; k < kf; ++k) {
    d.freeze_frames.push_back(load_png((fs::path(dir) / "freeze" / frame_name("frame", k)).string()));
    d.freeze_clean.push_back(load_png((fs::path(dir) / "freeze" / frame_name("clean", k)).string()));
  }
  for (size_t j = 0; j < d.reference_times.size(); ++j) {
    d.reference_frames.push_back(
        load_png((fs::path(dir) / "reference" / frame_name("frame", j)).string()));
  }

  std::ifstream pf(fs::path(dir) / "init_points.txt");
  if (!pf) throw std::runtime_error("cannot open init points in " + dir);
  std::vector<std::array<double, 6>> rows;
  std::string line;
  while (std::getline(pf, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::array<double, 6> r{};
    if (ss >> r[0] >> r[1] >> r[2] >> r[3] >> r[4] >> r[5]) rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error("no init points in " + dir);
  d.init_positions.resize(static_cast<int>(rows.size()), 3);
  d.init_colors.resize(static_cast<int>(rows.size()), 3);
  for (size_t i = 0; i < rows.size(); ++i) {
    d.init_positions.row(static_cast<int>(i)) << rows[i][0], rows[i][1], rows[i][2];
    d.init_colors.row(static_cast<int>(i)) << rows[i][3], rows[i][4], rows[i][5];
  }
  return d;
}

VecX finite_diff(const std::function<double(const VecX&)>& f, const VecX& params, double eps) {
  if (!(eps > 0.0)) throw std::runtime_error("finite difference needs eps > 0");
  VecX g(params.size());
  VecX x = params;
  for (int i = 0; i < params.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + eps;
    const double fp = f(x);
    x[i] = x0 - eps;
    const double fm = f(x);
    x[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("non-finite value in finite difference");
    }
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace dgs
