#include "mag/fusion.hpp"

#include <cmath>

#include "mag/errors.hpp"

namespace mag {

Fusion fusion_from_string(const std::string& s) {
  if (s == "none") return Fusion::None;
  if (s == "add") return Fusion::Add;
  if (s == "concat") return Fusion::Concat;
  throw ConfigError("unknown fusion variant '" + s + "' (expected none, add or concat)");
}

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::None: return "none";
    case Fusion::Add: return "add";
    case Fusion::Concat: return "concat";
  }
  return "none";
}

BaselineFusionParams BaselineFusionParams::init(Fusion kind, std::size_t d_model,
                                                std::size_t d_a, std::size_t d_v,
                                                std::uint64_t seed, bool requires_grad) {
  BaselineFusionParams p;
  p.kind = kind;
  p.d_model = d_model;
  p.d_a = d_a;
  p.d_v = d_v;
  auto uniform = [&](const char* name, std::size_t rows, std::size_t cols) {
    Rng rng(derive_seed(seed, name));
    return Tensor::uniform_init({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)), rng,
                                requires_grad);
  };
  if (kind == Fusion::Add) {
    p.p_a = uniform("fuse_p_a", d_a, d_model);
    p.p_v = uniform("fuse_p_v", d_v, d_model);
  } else if (kind == Fusion::Concat) {
    p.q = uniform("fuse_q", d_model + d_a + d_v, d_model);
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> BaselineFusionParams::named_parameters(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (p_a.defined()) out.emplace_back(prefix + "p_a", p_a);
  if (p_v.defined()) out.emplace_back(prefix + "p_v", p_v);
  if (q.defined()) out.emplace_back(prefix + "q", q);
  return out;
}

std::size_t BaselineFusionParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters("")) n += t.numel();
  return n;
}

namespace {

Tensor as_row(const Tensor& x) {
  if (x.shape().size() == 1) return reshape(x, {1, x.shape()[0]});
  return x;
}

}  // namespace

Tensor fuse_add(const Tensor& e_row, const Tensor& a, const Tensor& v,
                const BaselineFusionParams& p) {
  Tensor out = add(add(as_row(e_row), matmul(as_row(a), p.p_a)), matmul(as_row(v), p.p_v));
  return e_row.shape().size() == 1 ? reshape(out, {p.d_model}) : out;
}

Tensor fuse_concat(const Tensor& e_row, const Tensor& a, const Tensor& v,
                   const BaselineFusionParams& p) {
  Tensor out = matmul(concat_cols(concat_cols(as_row(e_row), as_row(a)), as_row(v)), p.q);
  return e_row.shape().size() == 1 ? reshape(out, {p.d_model}) : out;
}

Tensor fuse_seq(const Tensor& e_seq, const Tensor& a_seq, const Tensor& v_seq,
                const BaselineFusionParams& p) {
  if (e_seq.rows() != a_seq.rows() || e_seq.rows() != v_seq.rows()) {
    throw DimensionError("fuse_seq: sequence row counts disagree");
  }
  switch (p.kind) {
    case Fusion::None: return e_seq;
    case Fusion::Add: return fuse_add(e_seq, a_seq, v_seq, p);
    case Fusion::Concat: return fuse_concat(e_seq, a_seq, v_seq, p);
  }
  return e_seq;
}

}  // namespace mag
