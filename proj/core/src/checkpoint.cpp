#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgs/trainer.hpp"
#include "json.hpp"

namespace dgs {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'S', 'B'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("truncated checkpoint");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

void write_array(std::ostream& os, const std::string& name, const MatX& m) {
  const auto len = static_cast<std::uint16_t>(name.size());
  write_pod(os, len);
  write_bytes(os, name.data(), name.size());
  write_pod(os, static_cast<std::uint64_t>(m.rows()));
  write_pod(os, static_cast<std::uint64_t>(m.cols()));
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) write_pod(os, m(r, c));
  }
}

struct NamedArrays {
  std::map<std::string, MatX> arrays;

  const MatX& get(const std::string& name) const {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw std::runtime_error("checkpoint missing array: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return arrays.count(name) != 0; }
};

NamedArrays read_arrays(std::istream& is, std::uint32_t count) {
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint16_t>(is);
    std::string name(len, '\0');
    read_bytes(is, name.data(), len);
    const auto rows = read_pod<std::uint64_t>(is);
    const auto cols = read_pod<std::uint64_t>(is);
    MatX m(static_cast<int>(rows), static_cast<int>(cols));
    for (std::uint64_t r = 0; r < rows; ++r) {
      for (std::uint64_t c = 0; c < cols; ++c) {
        m(static_cast<int>(r), static_cast<int>(c)) = read_pod<double>(is);
      }
    }
    out.arrays[name] = std::move(m);
  }
  return out;
}

VecX to_vec(const MatX& m) {
  if (m.cols() != 1) throw std::runtime_error("checkpoint array is not a vector");
  return m.col(0);
}

void append_adam(std::vector<std::pair<std::string, const MatX*>>& list,
                 nlohmann::ordered_json& steps, const std::string& name, const AdamState& st) {
  steps[name] = st.step;
  if (st.m.size() == 0) return;
  list.push_back({"adam." + name + ".m", &st.m});
  list.push_back({"adam." + name + ".v", &st.v});
}

void restore_adam(const NamedArrays& arrays, const nlohmann::json& steps, const std::string& name,
                  AdamState& st) {
  st.step = steps.at(name).get<long>();
  if (arrays.has("adam." + name + ".m")) {
    st.m = arrays.get("adam." + name + ".m");
    st.v = arrays.get("adam." + name + ".v");
  } else {
    st.m.resize(0, 0);
    st.v.resize(0, 0);
  }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  nlohmann::ordered_json meta;
  meta["format"] = "dgs-checkpoint";
  meta["version"] = kVersion;
  meta["iter"] = iter_;
  meta["entered_stage"] = entered_stage_;
  meta["knn_built"] = knn_built_;
  meta["extent"] = extent_;
  meta["canonical_index"] = data_.canonical_index;
  meta["config"] = nlohmann::ordered_json::parse(config_to_json(cfg_));
  meta["rng"] = {{"data", rng_data_.serialize()}, {"sds", rng_sds_.serialize()}};

  std::vector<std::pair<std::string, const MatX*>> list;
  const MatX opa = cloud_.opacity_logits;
  list.push_back({"cloud.positions", &cloud_.positions});
  list.push_back({"cloud.raw_rotations", &cloud_.raw_rotations});
  list.push_back({"cloud.log_scales", &cloud_.log_scales});
  list.push_back({"cloud.opacity_logits", &opa});
  list.push_back({"cloud.colors", &cloud_.colors});
  const MatX perframe_params = perframe_.flatten();
  const MatX temporal_params = temporal_.flatten();
  list.push_back({"perframe.params", &perframe_params});
  list.push_back({"temporal.params", &temporal_params});
  list.push_back({"codes", &codes_});
  list.push_back({"pose_deltas", &pose_deltas_});
  MatX frozen(static_cast<int>(frozen_.size()), 1);
  for (size_t i = 0; i < frozen_.size(); ++i) frozen(static_cast<int>(i), 0) = frozen_[i];
  list.push_back({"frozen", &frozen});
  const MatX stats_accum = stats_.accum_pos_grad_norm;
  const MatX stats_counts = stats_.counts.cast<double>();
  const MatX stats_radius = stats_.max_screen_radius;
  list.push_back({"stats.accum", &stats_accum});
  list.push_back({"stats.counts", &stats_counts});
  list.push_back({"stats.max_radius", &stats_radius});
  MatX knn_n, knn_w;
  if (knn_built_) {
    knn_n = knn_.neighbors.cast<double>();
    knn_w = knn_.weights;
    list.push_back({"knn.neighbors", &knn_n});
    list.push_back({"knn.weights", &knn_w});
  }

  nlohmann::ordered_json steps;
  append_adam(list, steps, "pos", ad_pos_);
  append_adam(list, steps, "rot", ad_rot_);
  append_adam(list, steps, "scale", ad_scale_);
  append_adam(list, steps, "opa", ad_opa_);
  append_adam(list, steps, "col", ad_col_);
  append_adam(list, steps, "perframe", ad_perframe_);
  append_adam(list, steps, "temporal", ad_temporal_);
  append_adam(list, steps, "codes", ad_codes_);
  append_adam(list, steps, "pose", ad_pose_);
  meta["adam_steps"] = steps;
  if (knn_built_) {
    meta["knn_k"] = knn_.k;
    meta["knn_lambda_w"] = knn_.lambda_w;
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + tmp);
    write_bytes(os, kMagic, 4);
    write_pod(os, kVersion);
    const std::string meta_text = meta.dump();
    write_pod(os, static_cast<std::uint64_t>(meta_text.size()));
    write_bytes(os, meta_text.data(), meta_text.size());
    write_pod(os, static_cast<std::uint32_t>(list.size()));
    for (const auto& [name, m] : list) write_array(os, name, *m);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot finalize checkpoint: " + path);
  }
}

namespace {

nlohmann::json read_meta(std::istream& is, const std::string& path) {
  char magic[4];
  read_bytes(is, magic, 4);
  if (std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto meta_len = read_pod<std::uint64_t>(is);
  std::string meta_text(meta_len, '\0');
  read_bytes(is, meta_text.data(), meta_len);
  return nlohmann::json::parse(meta_text);
}

}  // namespace

RunConfig checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return parse_config_json(read_meta(is, path).at("config").dump());
}

Trainer Trainer::load_checkpoint(const std::string& path, TrainingData data,
                                 const RunConfig* override_config) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  const nlohmann::json meta = read_meta(is, path);
  const auto n_arrays = read_pod<std::uint32_t>(is);
  const NamedArrays arrays = read_arrays(is, n_arrays);

  const RunConfig cfg =
      override_config ? *override_config : parse_config_json(meta.at("config").dump());
  Trainer t(std::move(data), cfg);

  t.iter_ = meta.at("iter").get<int>();
  t.entered_stage_ = meta.at("entered_stage").get<std::string>();
  t.extent_ = meta.at("extent").get<double>();
  t.rng_data_.deserialize(meta.at("rng").at("data").get<std::string>());
  t.rng_sds_.deserialize(meta.at("rng").at("sds").get<std::string>());

  t.cloud_.positions = arrays.get("cloud.positions");
  t.cloud_.raw_rotations = arrays.get("cloud.raw_rotations");
  t.cloud_.log_scales = arrays.get("cloud.log_scales");
  t.cloud_.opacity_logits = to_vec(arrays.get("cloud.opacity_logits"));
  t.cloud_.colors = arrays.get("cloud.colors");
  t.cloud_.validate();
  t.perframe_.unflatten(to_vec(arrays.get("perframe.params")));
  t.temporal_.unflatten(to_vec(arrays.get("temporal.params")));
  t.codes_ = arrays.get("codes");
  t.pose_deltas_ = arrays.get("pose_deltas");

  const MatX frozen = arrays.get("frozen");
  t.frozen_.resize(frozen.rows());
  for (int i = 0; i < frozen.rows(); ++i) t.frozen_[i] = frozen(i, 0) != 0.0 ? 1 : 0;

  t.stats_ = GradStats::zeros(t.cloud_.size());
  t.stats_.accum_pos_grad_norm = to_vec(arrays.get("stats.accum"));
  t.stats_.counts = to_vec(arrays.get("stats.counts")).cast<int>();
  t.stats_.max_screen_radius = to_vec(arrays.get("stats.max_radius"));

  t.knn_built_ = meta.at("knn_built").get<bool>();
  if (t.knn_built_) {
    t.knn_.neighbors = arrays.get("knn.neighbors").cast<int>();
    t.knn_.weights = arrays.get("knn.weights");
    t.knn_.k = meta.at("knn_k").get<int>();
    t.knn_.lambda_w = meta.at("knn_lambda_w").get<double>();
  }

  const nlohmann::json& steps = meta.at("adam_steps");
  restore_adam(arrays, steps, "pos", t.ad_pos_);
  restore_adam(arrays, steps, "rot", t.ad_rot_);
  restore_adam(arrays, steps, "scale", t.ad_scale_);
  restore_adam(arrays, steps, "opa", t.ad_opa_);
  restore_adam(arrays, steps, "col", t.ad_col_);
  restore_adam(arrays, steps, "perframe", t.ad_perframe_);
  restore_adam(arrays, steps, "temporal", t.ad_temporal_);
  restore_adam(arrays, steps, "codes", t.ad_codes_);
  restore_adam(arrays, steps, "pose", t.ad_pose_);
  return t;
}

}  // namespace dgs
