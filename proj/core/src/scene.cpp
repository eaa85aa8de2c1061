#include "dgs/scene.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace dgs {

namespace {
constexpr double kShDc = 0.28209479177387814;  // 1 / (2 sqrt(pi))
}

void GaussianCloud::validate() const {
  const int n = size();
  if (n < 1) throw std::runtime_error("empty gaussian cloud");
  if (positions.cols() != 3 || raw_rotations.rows() != n || raw_rotations.cols() != 4 ||
      log_scales.rows() != n || log_scales.cols() != 3 || opacity_logits.size() != n ||
      colors.rows() != n || colors.cols() != 3) {
    throw std::runtime_error("gaussian cloud shape mismatch");
  }
}

GaussianCloud GaussianCloud::empty(int n) {
  GaussianCloud c;
  c.positions = MatX::Zero(n, 3);
  c.raw_rotations = MatX::Zero(n, 4);
  c.raw_rotations.col(0).setOnes();
  c.log_scales = MatX::Zero(n, 3);
  c.opacity_logits = VecX::Zero(n);
  c.colors = MatX::Zero(n, 3);
  return c;
}

DeformationOffsets DeformationOffsets::zeros(int n) {
  DeformationOffsets o;
  o.dx = MatX::Zero(n, 3);
  o.dq = MatX::Zero(n, 4);
  o.ds = MatX::Zero(n, 3);
  return o;
}

bool DeformationOffsets::all_zero() const {
  return dx.isZero(0.0) && dq.isZero(0.0) && ds.isZero(0.0);
}

Mat3 covariance(const Quat& q, const Vec3& s) {
  if (!(s[0] > 0.0 && s[1] > 0.0 && s[2] > 0.0)) {
    throw std::runtime_error("non-positive gaussian scale");
  }
  const Mat3 r = quat_to_rotmat(q);
  return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
}

GaussianCloud apply_offsets(const GaussianCloud& cloud, const DeformationOffsets& off) {
  if (off.size() != cloud.size() || off.dq.rows() != cloud.size() || off.ds.rows() != cloud.size()) {
    throw std::runtime_error("offset size mismatch");
  }
  GaussianCloud out = cloud;
  out.positions += off.dx;
  out.raw_rotations += off.dq;
  out.log_scales += off.ds;
  return out;
}

GaussianCloud quantize_to_float(const GaussianCloud& cloud) {
  GaussianCloud out = cloud;
  auto q = [](MatX& m) { m = m.cast<float>().cast<double>(); };
  q(out.positions);
  q(out.raw_rotations);
  q(out.log_scales);
  q(out.colors);
  out.opacity_logits = out.opacity_logits.cast<float>().cast<double>();
  return out;
}

namespace {

const char* const kPlyFields[] = {"x",       "y",       "z",       "rot_0",   "rot_1",
                                  "rot_2",   "rot_3",   "scale_0", "scale_1", "scale_2",
                                  "opacity", "f_dc_0",  "f_dc_1",  "f_dc_2"};
constexpr int kPlyFieldCount = 14;

void fill_row(const GaussianCloud& c, int i, float* out) {
  out[0] = static_cast<float>(c.positions(i, 0));
  out[1] = static_cast<float>(c.positions(i, 1));
  out[2] = static_cast<float>(c.positions(i, 2));
  for (int k = 0; k < 4; ++k) out[3 + k] = static_cast<float>(c.raw_rotations(i, k));
  for (int k = 0; k < 3; ++k) out[7 + k] = static_cast<float>(c.log_scales(i, k));
  out[10] = static_cast<float>(c.opacity_logits[i]);
  for (int k = 0; k < 3; ++k) {
    out[11 + k] = static_cast<float>((c.colors(i, k) - 0.5) / kShDc);
  }
}

}  // namespace

void export_ply(const GaussianCloud& cloud, const std::string& path) {
  cloud.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "ply\nformat binary_little_endian 1.0\n";
  f << "element vertex " << cloud.size() << "\n";
  for (int k = 0; k < kPlyFieldCount; ++k) f << "property float " << kPlyFields[k] << "\n";
  f << "end_header\n";
  std::vector<float> row(kPlyFieldCount);
  for (int i = 0; i < cloud.size(); ++i) {
    fill_row(cloud, i, row.data());
    f.write(reinterpret_cast<const char*>(row.data()), kPlyFieldCount * sizeof(float));
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

GaussianCloud import_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "ply") throw std::runtime_error("not a ply file: " + path);
  if (!std::getline(f, line) || line != "format binary_little_endian 1.0") {
    throw std::runtime_error("unsupported ply format: " + path);
  }
  long n = -1;
  std::vector<std::string> props;
  while (std::getline(f, line)) {
    if (line == "end_header") break;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment") continue;
    if (tok == "element") {
      std::string name;
      ss >> name >> n;
      if (name != "vertex") throw std::runtime_error("unexpected ply element: " + name);
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      if (type != "float") throw std::runtime_error("unsupported ply property type: " + type);
      props.push_back(name);
    }
  }
  if (n < 1) throw std::runtime_error("ply has no vertices: " + path);

  // Column lookup by name so extra properties and reordering are tolerated.
  std::map<std::string, int> col;
  for (size_t k = 0; k < props.size(); ++k) col[props[k]] = static_cast<int>(k);
  for (int k = 0; k < kPlyFieldCount; ++k) {
    if (!col.count(kPlyFields[k])) {
      throw std::runtime_error(std::string("ply missing property: ") + kPlyFields[k]);
    }
  }

  const int stride = static_cast<int>(props.size());
  std::vector<float> row(stride);
  GaussianCloud c = GaussianCloud::empty(static_cast<int>(n));
  for (long i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(row.data()), stride * sizeof(float));
    if (!f) throw std::runtime_error("truncated ply: " + path);
    c.positions(i, 0) = row[col["x"]];
    c.positions(i, 1) = row[col["y"]];
    c.positions(i, 2) = row[col["z"]];
    for (int k = 0; k < 4; ++k) c.raw_rotations(i, k) = row[col["rot_" + std::to_string(k)]];
    for (int k = 0; k < 3; ++k) c.log_scales(i, k) = row[col["scale_" + std::to_string(k)]];
    c.opacity_logits[i] = row[col["opacity"]];
    for (int k = 0; k < 3; ++k) {
      c.colors(i, k) = static_cast<double>(row[col["f_dc_" + std::to_string(k)]]) * kShDc + 0.5;
    }
  }
  return c;
}

}  // namespace dgs
