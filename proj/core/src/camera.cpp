#include "dgs/camera.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dgs {

Vec2 Camera::project(const Vec3& p_world, double* depth) const {
  const Vec3 pc = to_camera(p_world);
  if (depth) *depth = pc.z();
  const double z = std::abs(pc.z()) < 1e-12 ? (pc.z() < 0 ? -1e-12 : 1e-12) : pc.z();
  return {fx * pc.x() / z + cx, fy * pc.y() / z + cy};
}

Camera Camera::scaled(double factor) const {
  Camera c = *this;
  c.width = std::max(1, static_cast<int>(std::lround(width * factor)));
  c.height = std::max(1, static_cast<int>(std::lround(height * factor)));
  const double sx = static_cast<double>(c.width) / width;
  const double sy = static_cast<double>(c.height) / height;
  c.fx = fx * sx;
  c.fy = fy * sy;
  c.cx = cx * sx;
  c.cy = cy * sy;
  return c;
}

Camera Camera::resized(int w, int h) const {
  Camera c = *this;
  const double sx = static_cast<double>(w) / width;
  const double sy = static_cast<double>(h) / height;
  c.width = w;
  c.height = h;
  c.fx = fx * sx;
  c.fy = fy * sy;
  c.cx = cx * sx;
  c.cy = cy * sy;
  return c;
}

Camera apply_pose_delta(const Camera& cam, const PoseDelta& d) {
  Camera out = cam;
  out.rotation = axis_angle_to_rotmat(d.axis_angle) * cam.rotation;
  out.translation = cam.translation + d.dt;
  return out;
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy,
               int width, int height) {
  const Vec3 fwd = target - eye;
  if (fwd.norm() < 1e-12) throw std::runtime_error("look_at: eye equals target");
  const Vec3 z = fwd.normalized();
  Vec3 x = up.cross(z);  // up x forward gives +x right with +y down
  if (x.norm() < 1e-12) throw std::runtime_error("look_at: up parallel to view direction");
  x.normalize();
  const Vec3 y = z.cross(x);
  Camera c;
  c.rotation.row(0) = x.transpose();
  c.rotation.row(1) = y.transpose();
  c.rotation.row(2) = z.transpose();
  c.translation = -c.rotation * eye;
  c.fx = fx;
  c.fy = fy;
  c.width = width;
  c.height = height;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  return c;
}

Camera perturb_pose(const Camera& cam, const Vec3& target, double radius, RngStream& rng) {
  if (radius == 0.0) return cam;
  const Vec3 c0 = cam.center();
  if ((c0 - target).norm() < 1e-12) throw std::runtime_error("perturb_pose: camera at target");

  // Uniform over the disk: density proportional to r forces the sqrt.
  const double r = radius * std::sqrt(rng.uniform());
  const double phi = 2.0 * M_PI * rng.uniform();
  const Vec3 local{r * std::cos(phi), r * std::sin(phi), 0.0};
  const Vec3 c1 = c0 + cam.rotation.transpose() * local;

  const Vec3 up_old = -cam.rotation.row(1).transpose();  // world up of the old frame
  return look_at(c1, target, up_old, cam.fx, cam.fy, cam.width, cam.height);
}

namespace {

Quat slerp(Quat q0, Quat q1, double a) {
  if (q0.dot(q1) < 0.0) q1 = {-q1.w, -q1.x, -q1.y, -q1.z};
  const double cosw = std::min(1.0, std::max(-1.0, q0.dot(q1)));
  if (cosw > 1.0 - 1e-10) {
    return Quat{(1 - a) * q0.w + a * q1.w, (1 - a) * q0.x + a * q1.x, (1 - a) * q0.y + a * q1.y,
                (1 - a) * q0.z + a * q1.z}
        .normalized();
  }
  const double w = std::acos(cosw);
  const double s0 = std::sin((1.0 - a) * w) / std::sin(w);
  const double s1 = std::sin(a * w) / std::sin(w);
  return Quat{s0 * q0.w + s1 * q1.w, s0 * q0.x + s1 * q1.x, s0 * q0.y + s1 * q1.y,
              s0 * q0.z + s1 * q1.z}
      .normalized();
}

}  // namespace

std::vector<Camera> interpolate_trajectory(const Camera& p0, const Camera& p1, int M) {
  if (M < 2) throw std::runtime_error("trajectory needs at least two poses");
  std::vector<Camera> path;
  path.reserve(M);
  const Quat q0 = rotmat_to_quat(p0.rotation);
  const Quat q1 = rotmat_to_quat(p1.rotation);
  for (int i = 0; i < M; ++i) {
    const double a = static_cast<double>(i) / (M - 1);
    if (a == 0.0) {
      path.push_back(p0);
      continue;
    }
    if (a == 1.0) {
      path.push_back(p1);
      continue;
    }
    Camera c = p0;  // intrinsics follow the start pose
    c.rotation = quat_to_rotmat(slerp(q0, q1, a));
    c.translation = (1.0 - a) * p0.translation + a * p1.translation;
    path.push_back(c);
  }
  return path;
}

void save_cameras(const std::vector<Camera>& cams, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "# frame qw qx qy qz tx ty tz fx fy cx cy width height\n";
  f.precision(17);
  for (size_t i = 0; i < cams.size(); ++i) {
    const Camera& c = cams[i];
    const Quat q = rotmat_to_quat(c.rotation);
    f << i << ' ' << q.w << ' ' << q.x << ' ' << q.y << ' ' << q.z << ' ' << c.translation.x()
      << ' ' << c.translation.y() << ' ' << c.translation.z() << ' ' << c.fx << ' ' << c.fy << ' '
      << c.cx << ' ' << c.cy << ' ' << c.width << ' ' << c.height << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<Camera> cams;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    long frame;
    if (!(ss >> frame)) continue;  // blank or comment-only line
    Quat q;
    Camera c;
    if (!(ss >> q.w >> q.x >> q.y >> q.z >> c.translation.x() >> c.translation.y() >>
          c.translation.z() >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height)) {
      throw std::runtime_error("malformed camera line: " + line);
    }
    if (frame != static_cast<long>(cams.size())) {
      throw std::runtime_error("camera frames out of order in " + path);
    }
    c.rotation = quat_to_rotmat(q);
    cams.push_back(c);
  }
  if (cams.empty()) throw std::runtime_error("no cameras in " + path);
  return cams;
}

}  // namespace dgs
