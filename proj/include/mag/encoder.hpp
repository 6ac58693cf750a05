#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mag/fusion.hpp"
#include "mag/gate.hpp"
#include "mag/tensor.hpp"

namespace mag {

enum class ClsPosition { Front, End };
enum class Injection { None, Embedding, Layer, All };

ClsPosition cls_position_from_string(const std::string& s);
std::string to_string(ClsPosition c);

struct InjectionSpec {
  Injection kind = Injection::None;
  std::size_t layer = 1;  // 1-based, valid when kind == Layer
};
InjectionSpec injection_from_string(const std::string& s);
std::string to_string(const InjectionSpec& inj);

struct EncoderConfig {
  std::size_t num_layers = 4;  // M
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 256;
  std::size_t max_len = 24;
  std::size_t d_a = 5;
  std::size_t d_v = 7;
  ClsPosition cls_position = ClsPosition::Front;
  InjectionSpec injection;
  Fusion fusion = Fusion::None;
  double hidden_dropout_p = 0.1;
  double beta_shift = 1.0;
  double mag_dropout_p = -1.0;  // negative means tied to hidden_dropout_p
  double eps_guard = 1e-9;
  double ln_eps = 1e-5;
  GateActivation gate_activation = GateActivation::Relu;
  bool share_mag_params = false;

  void validate() const;  // throws ConfigError
  double effective_mag_dropout() const {
    return mag_dropout_p < 0.0 ? hidden_dropout_p : mag_dropout_p;
  }
  std::string to_json() const;
  static EncoderConfig from_json(const std::string& json_text);
};

struct EncoderLayerParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;
};

struct ParameterCounts {
  std::size_t encoder = 0;  // embeddings + layers + head
  std::size_t mag = 0;      // all injection sites
  std::size_t fusion = 0;
  std::size_t total() const { return encoder + mag + fusion; }
};

/// Per-stage hidden states captured during forward; labels are "embed",
/// "layer<l>" and "mag<site>" in application order.
struct ForwardTrace {
  std::vector<std::pair<std::string, Tensor>> stages;
  const Tensor* find(const std::string& label) const;
};

/// Miniature BERT/XLNet-style regression encoder with optional gate
/// attachments. Absolute learned position embeddings, one learned segment
/// vector, full bidirectional attention, no padding mask.
class EncoderModel {
 public:
  EncoderModel(EncoderConfig cfg, std::uint64_t init_seed);

  const EncoderConfig& config() const { return cfg_; }
  std::size_t cls_index(std::size_t n_words) const;

  /// Token/segment/position sum with the CLS id inserted at the configured
  /// end. Throws on overlong sequences and out-of-vocabulary ids.
  Tensor embed(const std::vector<std::size_t>& tokens) const;

  Tensor encoder_layer_forward(std::size_t layer, const Tensor& x, Mode mode, Rng& rng) const;
  /// Applies layers (from, to], 1-based; from == 0 starts at the first layer.
  Tensor run_layers(const Tensor& x, std::size_t from, std::size_t to, Mode mode,
                    Rng& rng) const;
  /// Multi-head self-attention sub-block of one layer (pre-residual).
  Tensor mha(std::size_t layer, const Tensor& x, Mode mode, Rng& rng) const;

  /// Scalar prediction for one example; a_seq/v_seq have one row per word
  /// (no CLS row; the CLS triplet uses zero nonverbal vectors).
  Tensor forward(const std::vector<std::size_t>& tokens, const Tensor& a_seq,
                 const Tensor& v_seq, Mode mode, Rng& rng, ForwardTrace* trace = nullptr) const;

  /// Eval-mode prediction without graph recording.
  double predict(const std::vector<std::size_t>& tokens,
                 const std::vector<std::vector<double>>& acoustic,
                 const std::vector<std::vector<double>>& visual) const;

  ParameterCounts count_parameters() const;
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
    return registry_;
  }
  std::vector<Tensor> parameter_tensors() const;
  void zero_grads() const;

  // Versioned binary container: config JSON + named flat arrays, byte-stable
  // across save/load/save.
  void save(const std::string& path) const;
  static EncoderModel load(const std::string& path);

  std::size_t mag_site_count() const { return mags_.size(); }
  const MagParams& mag_at_site(std::size_t site) const;  // site 0 = after embedding
  MagParams& mag_at_site(std::size_t site);
  const BaselineFusionParams& fusion_params() const { return fusion_; }

  static Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows, std::size_t cols,
                               bool requires_grad = false);

 private:
  EncoderConfig cfg_;
  Tensor token_emb_;  // [vocab × d_model]
  Tensor pos_emb_;    // [max_len × d_model]
  Tensor seg_emb_;    // [d_model], single segment
  std::vector<EncoderLayerParams> layers_;
  std::vector<MagParams> mags_;  // indexed by site unless shared
  BaselineFusionParams fusion_;
  Tensor head_w_;  // [d_model × 1]
  Tensor head_b_;  // [1]
  std::vector<std::pair<std::string, Tensor>> registry_;

  const MagParams* mag_for_site(std::size_t site) const;
  Tensor nonverbal_with_cls(const Tensor& seq, std::size_t dim, std::size_t n_words) const;
  void build_registry();
};

}  // namespace mag
