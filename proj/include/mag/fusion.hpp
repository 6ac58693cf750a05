#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mag/tensor.hpp"

namespace mag {

enum class Fusion { None, Add, Concat };

Fusion fusion_from_string(const std::string& s);
std::string to_string(Fusion f);

/// Input-level fusion baselines: either add projected nonverbal features to
/// the embedding (variant "add") or project the concatenation of all
/// modalities back to the model dimension (variant "concat").
struct BaselineFusionParams {
  Fusion kind = Fusion::None;
  std::size_t d_model = 0, d_a = 0, d_v = 0;
  Tensor p_a;  // [d_a × d_model], add variant
  Tensor p_v;  // [d_v × d_model], add variant
  Tensor q;    // [(d_model+d_a+d_v) × d_model], concat variant

  static BaselineFusionParams init(Fusion kind, std::size_t d_model, std::size_t d_a,
                                   std::size_t d_v, std::uint64_t seed,
                                   bool requires_grad = true);

  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;
  std::size_t parameter_count() const;
};

// Per-row ops on 1-D vectors.
Tensor fuse_add(const Tensor& e_row, const Tensor& a, const Tensor& v,
                const BaselineFusionParams& p);
Tensor fuse_concat(const Tensor& e_row, const Tensor& a, const Tensor& v,
                   const BaselineFusionParams& p);

// Sequence-level application over an embedded sequence; nonverbal rows must
// already carry zeros at the CLS position so the CLS row passes unchanged
// (add) or is concatenated with zero nonverbal vectors (concat).
Tensor fuse_seq(const Tensor& e_seq, const Tensor& a_seq, const Tensor& v_seq,
                const BaselineFusionParams& p);

}  // namespace mag
