#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mag/tensor.hpp"

namespace mag {

enum class Mode { Train, Eval };

enum class GateActivation { Relu, Sigmoid };

GateActivation gate_activation_from_string(const std::string& s);
std::string to_string(GateActivation a);

/// Weights of one adaptation-gate attachment. The gate conditions two
/// nonnegative gating vectors on the lexical vector, fuses the projected
/// acoustic/visual features into a displacement, caps the displacement norm
/// at beta times the lexical norm, shifts, then layer-normalizes.
struct MagParams {
  std::size_t d_z = 0;
  std::size_t d_a = 0;
  std::size_t d_v = 0;

  Tensor w_gv;      // [(d_z+d_v) × d_z]
  Tensor w_ga;      // [(d_z+d_a) × d_z]
  Tensor w_a;       // [d_a × d_z]
  Tensor w_v;       // [d_v × d_z]
  Tensor b_v;       // scalar bias, broadcast across d_z
  Tensor b_a;       // scalar bias, broadcast across d_z
  Tensor b_h;       // [d_z]
  Tensor ln_gain;   // [d_z]
  Tensor ln_bias;   // [d_z]

  double beta = 1.0;        // shift cap relative to the lexical norm
  double eps_guard = 1e-9;  // added to the displacement norm in the cap ratio
  double dropout_p = 0.1;
  double ln_eps = 1e-5;
  GateActivation activation = GateActivation::Relu;

  // Matrices uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero so the
  // untrained gate is an exact zero shift; LN gain ones, bias zeros.
  static MagParams init(std::size_t d_z, std::size_t d_a, std::size_t d_v, double beta,
                        double dropout_p, std::uint64_t seed, bool requires_grad = true);

  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;
  std::size_t parameter_count() const;
  void check_dims(std::size_t dz, std::size_t da, std::size_t dv) const;
};

/// One word's lexical/acoustic/visual input vectors (1-D tensors).
struct WordTriplet {
  Tensor z;  // [d_z]
  Tensor a;  // [d_a]
  Tensor v;  // [d_v]
};

// ---- per-word operations (1-D in, 1-D out) ----------------------------------

/// g_a = R(W_ga·[Z;A] + b_a), g_v = R(W_gv·[Z;V] + b_v); lexical-first concat.
std::pair<Tensor, Tensor> compute_gates(const WordTriplet& t, const MagParams& p);

/// H = g_a ⊙ (W_a·A) + g_v ⊙ (W_v·V) + b_H
Tensor compute_displacement(const Tensor& g_a, const Tensor& g_v, const WordTriplet& t,
                            const MagParams& p);

/// alpha = min(beta·‖Z‖₂ / (‖H‖₂ + eps_guard), 1), a scalar tensor in [0, 1].
Tensor compute_alpha(const Tensor& z, const Tensor& h, double beta, double eps_guard);

/// Z̄ = Dropout(LayerNorm(Z + alpha·H)); dropout active in train mode only.
Tensor mag_forward(const WordTriplet& t, const MagParams& p, Mode mode, Rng& rng);

// ---- sequence-level application ----------------------------------------------
// Rows of z/a/v are per-position triplets; alpha is computed per row. Used by
// the encoder to apply the gate to a whole (N+1)-row hidden state at once.

Tensor mag_forward_seq(const Tensor& z_seq, const Tensor& a_seq, const Tensor& v_seq,
                       const MagParams& p, Mode mode, Rng& rng);

}  // namespace mag
