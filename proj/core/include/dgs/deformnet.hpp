#pragma once

#include <vector>

#include "dgs/geometry.hpp"
#include "dgs/rng.hpp"
#include "dgs/scene.hpp"
#include "dgs/types.hpp"

namespace dgs {

// Deformation field MLP: encoded position concatenated with a conditioning
// vector, 8 hidden ReLU layers of width 256, the full input re-concatenated
// before hidden layer 4, and three linear heads (dx, dq, ds) with no
// activation. Heads start at zero so a fresh field is the identity.
struct MlpField {
  static constexpr int kHiddenLayers = 8;
  static constexpr int kHiddenWidth = 256;
  static constexpr int kSkipLayer = 4;

  PosEncConfig pos_enc{10, true};
  int cond_dim = 0;

  std::vector<MatX> weights;  // out x in, per hidden layer
  std::vector<VecX> biases;
  MatX head_dx_w, head_dq_w, head_ds_w;  // 3/4/3 x 256
  VecX head_dx_b, head_dq_b, head_ds_b;

  int input_dim() const { return pos_enc.output_dim(3) + cond_dim; }
  int parameter_count() const;

  // Hidden layers get uniform Glorot init; heads are zero.
  static MlpField create(int cond_dim, RngStream& rng, PosEncConfig pos_enc = {10, true});

  // Flat parameter-vector view, fixed order: hidden W/b pairs, then the three
  // head W/b pairs. Used by the optimizer and checkpoints.
  VecX flatten() const;
  void unflatten(const VecX& flat);
};

// Conditioning input for one evaluation: either an encoded scalar time or a
// learned per-frame code. `canonical` selects the hard-zero bypass.
struct FieldCond {
  VecX vec;
  bool canonical = false;
};

// Scalar time in [0,1] encoded with L=6 frequencies plus the raw value.
VecX encode_time(double t);
inline constexpr int kTimeEncDim = 13;

// Intermediate activations captured for the backward pass.
struct FieldCache {
  MatX input;                    // N x input_dim
  std::vector<MatX> pre;        // N x width, pre-activation per hidden layer
  bool canonical = false;
  int n = 0;
};

// Offsets for every splat; exact zeros (no network evaluation) when
// cond.canonical is set.
DeformationOffsets field_forward(const MlpField& field, const MatX& positions,
                                 const FieldCond& cond, FieldCache* cache = nullptr);

struct FieldGrads {
  VecX d_params;   // same layout as MlpField::flatten()
  MatX d_positions;
  VecX d_cond;
};

FieldGrads field_backward(const MlpField& field, const MatX& positions, const FieldCond& cond,
                          const FieldCache& cache, const DeformationOffsets& d_offsets);

}  // namespace dgs
