#include "mag/gate.hpp"

#include <cmath>

#include "mag/errors.hpp"

namespace mag {

GateActivation gate_activation_from_string(const std::string& s) {
  if (s == "relu") return GateActivation::Relu;
  if (s == "sigmoid") return GateActivation::Sigmoid;
  throw ConfigError("unknown gate activation '" + s + "' (expected relu or sigmoid)");
}

std::string to_string(GateActivation a) {
  return a == GateActivation::Relu ? "relu" : "sigmoid";
}

namespace {

Tensor apply_activation(const Tensor& x, GateActivation a) {
  return a == GateActivation::Relu ? relu(x) : sigmoid(x);
}

Tensor as_row(const Tensor& x) {
  if (x.shape().size() == 1) return reshape(x, {1, x.shape()[0]});
  return x;
}

}  // namespace

MagParams MagParams::init(std::size_t d_z, std::size_t d_a, std::size_t d_v, double beta,
                          double dropout_p, std::uint64_t seed, bool requires_grad) {
  if (d_z == 0 || d_a == 0 || d_v == 0) throw ConfigError("MagParams: dimensions must be positive");
  if (beta <= 0.0) throw ConfigError("MagParams: beta must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("MagParams: dropout_p must be in [0, 1)");

  MagParams p;
  p.d_z = d_z;
  p.d_a = d_a;
  p.d_v = d_v;
  p.beta = beta;
  p.dropout_p = dropout_p;

  auto uniform = [&](const char* name, std::size_t rows, std::size_t cols) {
    Rng rng(derive_seed(seed, name));
    return Tensor::uniform_init({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)), rng,
                                requires_grad);
  };
  p.w_gv = uniform("w_gv", d_z + d_v, d_z);
  p.w_ga = uniform("w_ga", d_z + d_a, d_z);
  p.w_a = uniform("w_a", d_a, d_z);
  p.w_v = uniform("w_v", d_v, d_z);
  p.b_v = Tensor::scalar(0.0, requires_grad);
  p.b_a = Tensor::scalar(0.0, requires_grad);
  p.b_h = Tensor::zeros({d_z}, requires_grad);
  p.ln_gain = Tensor::full({d_z}, 1.0, requires_grad);
  p.ln_bias = Tensor::zeros({d_z}, requires_grad);
  return p;
}

std::vector<std::pair<std::string, Tensor>> MagParams::named_parameters(
    const std::string& prefix) const {
  return {{prefix + "w_gv", w_gv}, {prefix + "w_ga", w_ga}, {prefix + "w_a", w_a},
          {prefix + "w_v", w_v},   {prefix + "b_v", b_v},   {prefix + "b_a", b_a},
          {prefix + "b_h", b_h},   {prefix + "ln_gain", ln_gain}, {prefix + "ln_bias", ln_bias}};
}

std::size_t MagParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters("")) n += t.numel();
  return n;
}

void MagParams::check_dims(std::size_t dz, std::size_t da, std::size_t dv) const {
  if (d_z != dz || d_a != da || d_v != dv) {
    throw DimensionError("MagParams built for (d_z, d_a, d_v) = (" + std::to_string(d_z) + ", " +
                         std::to_string(d_a) + ", " + std::to_string(d_v) + "), got (" +
                         std::to_string(dz) + ", " + std::to_string(da) + ", " +
                         std::to_string(dv) + ")");
  }
}

namespace {

std::pair<Tensor, Tensor> gates_seq(const Tensor& z, const Tensor& a, const Tensor& v,
                                    const MagParams& p) {
  Tensor g_v = apply_activation(
      add_scalar_tensor(matmul(concat_cols(z, v), p.w_gv), p.b_v), p.activation);
  Tensor g_a = apply_activation(
      add_scalar_tensor(matmul(concat_cols(z, a), p.w_ga), p.b_a), p.activation);
  return {g_a, g_v};
}

Tensor displacement_seq(const Tensor& g_a, const Tensor& g_v, const Tensor& a, const Tensor& v,
                        const MagParams& p) {
  return add_row_broadcast(add(mul(g_a, matmul(a, p.w_a)), mul(g_v, matmul(v, p.w_v))), p.b_h);
}

Tensor alpha_rows(const Tensor& z, const Tensor& h, double beta, double eps_guard) {
  Tensor ratio = div_elem(scale(row_l2_norms(z), beta), add_const(row_l2_norms(h), eps_guard));
  return min_const(ratio, 1.0);
}

void check_triplet(const WordTriplet& t, const MagParams& p) {
  if (t.z.shape().size() != 1 || t.a.shape().size() != 1 || t.v.shape().size() != 1) {
    throw DimensionError("WordTriplet expects 1-D vectors");
  }
  p.check_dims(t.z.shape()[0], t.a.shape()[0], t.v.shape()[0]);
}

}  // namespace

std::pair<Tensor, Tensor> compute_gates(const WordTriplet& t, const MagParams& p) {
  check_triplet(t, p);
  auto [g_a, g_v] = gates_seq(as_row(t.z), as_row(t.a), as_row(t.v), p);
  return {reshape(g_a, {p.d_z}), reshape(g_v, {p.d_z})};
}

Tensor compute_displacement(const Tensor& g_a, const Tensor& g_v, const WordTriplet& t,
                            const MagParams& p) {
  check_triplet(t, p);
  Tensor h = displacement_seq(as_row(g_a), as_row(g_v), as_row(t.a), as_row(t.v), p);
  return reshape(h, {p.d_z});
}

Tensor compute_alpha(const Tensor& z, const Tensor& h, double beta, double eps_guard) {
  if (beta <= 0.0) throw ContractError("compute_alpha: beta must be positive");
  if (eps_guard <= 0.0) throw ContractError("compute_alpha: eps_guard must be positive");
  Tensor ratio = div_elem(scale(l2_norm(z), beta), add_const(l2_norm(h), eps_guard));
  return min_const(ratio, 1.0);
}

Tensor mag_forward(const WordTriplet& t, const MagParams& p, Mode mode, Rng& rng) {
  check_triplet(t, p);
  Tensor out = mag_forward_seq(as_row(t.z), as_row(t.a), as_row(t.v), p, mode, rng);
  return reshape(out, {p.d_z});
}

Tensor mag_forward_seq(const Tensor& z_seq, const Tensor& a_seq, const Tensor& v_seq,
                       const MagParams& p, Mode mode, Rng& rng) {
  if (z_seq.shape().size() != 2 || a_seq.shape().size() != 2 || v_seq.shape().size() != 2 ||
      z_seq.rows() != a_seq.rows() || z_seq.rows() != v_seq.rows()) {
    throw DimensionError("mag_forward_seq: z/a/v must be 2-D with equal row counts");
  }
  p.check_dims(z_seq.cols(), a_seq.cols(), v_seq.cols());

  auto [g_a, g_v] = gates_seq(z_seq, a_seq, v_seq, p);
  Tensor h = displacement_seq(g_a, g_v, a_seq, v_seq, p);
  Tensor alpha = alpha_rows(z_seq, h, p.beta, p.eps_guard);
  Tensor shifted = add(z_seq, scale_rows(h, alpha));
  Tensor normed = layer_norm(shifted, p.ln_gain, p.ln_bias, p.ln_eps);
  return dropout(normed, p.dropout_p, rng, mode == Mode::Train);
}

}  // namespace mag
