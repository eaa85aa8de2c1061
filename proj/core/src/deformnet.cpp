#include "dgs/deformnet.hpp"

#include <cmath>
#include <stdexcept>

namespace dgs {

namespace {

int layer_in_dim(int layer, int input_dim) {
  if (layer == 0) return input_dim;
  if (layer == MlpField::kSkipLayer) return MlpField::kHiddenWidth + input_dim;
  return MlpField::kHiddenWidth;
}

}  // namespace

int MlpField::parameter_count() const {
  int c = 0;
  for (size_t l = 0; l < weights.size(); ++l) {
    c += static_cast<int>(weights[l].size() + biases[l].size());
  }
  c += static_cast<int>(head_dx_w.size() + head_dx_b.size());
  c += static_cast<int>(head_dq_w.size() + head_dq_b.size());
  c += static_cast<int>(head_ds_w.size() + head_ds_b.size());
  return c;
}

MlpField MlpField::create(int cond_dim, RngStream& rng, PosEncConfig pos_enc) {
  MlpField f;
  f.pos_enc = pos_enc;
  f.cond_dim = cond_dim;
  const int din = f.input_dim();
  f.weights.resize(kHiddenLayers);
  f.biases.resize(kHiddenLayers);
  for (int l = 0; l < kHiddenLayers; ++l) {
    const int in = layer_in_dim(l, din);
    f.weights[l] = MatX(kHiddenWidth, in);
    const double lim = std::sqrt(6.0 / (in + kHiddenWidth));
    for (Eigen::Index k = 0; k < f.weights[l].size(); ++k) {
      f.weights[l].data()[k] = rng.uniform(-lim, lim);
    }
    f.biases[l] = VecX::Zero(kHiddenWidth);
  }
  f.head_dx_w = MatX::Zero(3, kHiddenWidth);
  f.head_dq_w = MatX::Zero(4, kHiddenWidth);
  f.head_ds_w = MatX::Zero(3, kHiddenWidth);
  f.head_dx_b = VecX::Zero(3);
  f.head_dq_b = VecX::Zero(4);
  f.head_ds_b = VecX::Zero(3);
  return f;
}

VecX MlpField::flatten() const {
  VecX out(parameter_count());
  Eigen::Index at = 0;
  auto put = [&](const double* p, Eigen::Index n) {
    out.segment(at, n) = Eigen::Map<const VecX>(p, n);
    at += n;
  };
  for (int l = 0; l < kHiddenLayers; ++l) {
    put(weights[l].data(), weights[l].size());
    put(biases[l].data(), biases[l].size());
  }
  put(head_dx_w.data(), head_dx_w.size());
  put(head_dx_b.data(), head_dx_b.size());
  put(head_dq_w.data(), head_dq_w.size());
  put(head_dq_b.data(), head_dq_b.size());
  put(head_ds_w.data(), head_ds_w.size());
  put(head_ds_b.data(), head_ds_b.size());
  return out;
}

void MlpField::unflatten(const VecX& flat) {
  if (flat.size() != parameter_count()) throw std::runtime_error("parameter vector size mismatch");
  Eigen::Index at = 0;
  auto take = [&](double* p, Eigen::Index n) {
    Eigen::Map<VecX>(p, n) = flat.segment(at, n);
    at += n;
  };
  for (int l = 0; l < kHiddenLayers; ++l) {
    take(weights[l].data(), weights[l].size());
    take(biases[l].data(), biases[l].size());
  }
  take(head_dx_w.data(), head_dx_w.size());
  take(head_dx_b.data(), head_dx_b.size());
  take(head_dq_w.data(), head_dq_w.size());
  take(head_dq_b.data(), head_dq_b.size());
  take(head_ds_w.data(), head_ds_w.size());
  take(head_ds_b.data(), head_ds_b.size());
}

VecX encode_time(double t) {
  VecX v(1);
  v[0] = t;
  return posenc(v, PosEncConfig{6, true});
}

DeformationOffsets field_forward(const MlpField& field, const MatX& positions,
                                 const FieldCond& cond, FieldCache* cache) {
  const int n = static_cast<int>(positions.rows());
  if (positions.cols() != 3) throw std::runtime_error("positions must be N x 3");
  if (cond.vec.size() != field.cond_dim) throw std::runtime_error("conditioning size mismatch");
  if (cache) {
    cache->canonical = cond.canonical;
    cache->n = n;
  }
  if (cond.canonical) return DeformationOffsets::zeros(n);

  const int din = field.input_dim();
  MatX input(n, din);
  for (int i = 0; i < n; ++i) {
    input.row(i).head(field.pos_enc.output_dim(3)) =
        posenc(positions.row(i).transpose(), field.pos_enc).transpose();
    input.row(i).tail(field.cond_dim) = cond.vec.transpose();
  }

  MatX z = input;
  std::vector<MatX> pre(MlpField::kHiddenLayers);
  for (int l = 0; l < MlpField::kHiddenLayers; ++l) {
    MatX in_l;
    if (l == MlpField::kSkipLayer) {
      in_l.resize(n, MlpField::kHiddenWidth + din);
      in_l << z, input;
    } else {
      in_l = std::move(z);
    }
    pre[l] = (in_l * field.weights[l].transpose()).rowwise() + field.biases[l].transpose();
    z = pre[l].cwiseMax(0.0);
  }

  DeformationOffsets off;
  off.dx = (z * field.head_dx_w.transpose()).rowwise() + field.head_dx_b.transpose();
  off.dq = (z * field.head_dq_w.transpose()).rowwise() + field.head_dq_b.transpose();
  off.ds = (z * field.head_ds_w.transpose()).rowwise() + field.head_ds_b.transpose();

  if (cache) {
    cache->input = std::move(input);
    cache->pre = std::move(pre);
  }
  return off;
}

FieldGrads field_backward(const MlpField& field, const MatX& positions, const FieldCond& cond,
                          const FieldCache& cache, const DeformationOffsets& d_offsets) {
  const int n = static_cast<int>(positions.rows());
  FieldGrads g;
  g.d_positions = MatX::Zero(n, 3);
  g.d_cond = VecX::Zero(field.cond_dim);
  if (cond.canonical) {
    g.d_params = VecX::Zero(field.parameter_count());
    return g;
  }
  if (cache.n != n || cache.pre.size() != MlpField::kHiddenLayers) {
    throw std::runtime_error("field cache does not match forward");
  }

  const int din = field.input_dim();
  const MatX z_last = cache.pre.back().cwiseMax(0.0);

  MlpField grads = field;  // same shapes, reused as a gradient container
  for (auto& w : grads.weights) w.setZero();
  for (auto& b : grads.biases) b.setZero();

  grads.head_dx_w = d_offsets.dx.transpose() * z_last;
  grads.head_dx_b = d_offsets.dx.colwise().sum().transpose();
  grads.head_dq_w = d_offsets.dq.transpose() * z_last;
  grads.head_dq_b = d_offsets.dq.colwise().sum().transpose();
  grads.head_ds_w = d_offsets.ds.transpose() * z_last;
  grads.head_ds_b = d_offsets.ds.colwise().sum().transpose();

  MatX d_z = d_offsets.dx * field.head_dx_w + d_offsets.dq * field.head_dq_w +
             d_offsets.ds * field.head_ds_w;
  MatX d_input = MatX::Zero(n, din);

  for (int l = MlpField::kHiddenLayers - 1; l >= 0; --l) {
    const MatX d_pre = (cache.pre[l].array() > 0.0).select(d_z, MatX::Zero(n, d_z.cols()));
    MatX in_l;
    if (l == 0) {
      in_l = cache.input;
    } else if (l == MlpField::kSkipLayer) {
      in_l.resize(n, MlpField::kHiddenWidth + din);
      in_l << cache.pre[l - 1].cwiseMax(0.0), cache.input;
    } else {
      in_l = cache.pre[l - 1].cwiseMax(0.0);
    }
    grads.weights[l] = d_pre.transpose() * in_l;
    grads.biases[l] = d_pre.colwise().sum().transpose();
    const MatX d_in = d_pre * field.weights[l];
    if (l == 0) {
      d_input += d_in;
      break;
    }
    if (l == MlpField::kSkipLayer) {
      d_z = d_in.leftCols(MlpField::kHiddenWidth);
      d_input += d_in.rightCols(din);
    } else {
      d_z = d_in;
    }
  }

  const int enc_dim = field.pos_enc.output_dim(3);
  for (int i = 0; i < n; ++i) {
    g.d_positions.row(i) =
        posenc_backward(positions.row(i).transpose(), field.pos_enc,
                        d_input.row(i).head(enc_dim).transpose())
            .transpose();
  }
  g.d_cond = d_input.rightCols(field.cond_dim).colwise().sum().transpose();
  g.d_params = grads.flatten();
  return g;
}

}  // namespace dgs
