#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mag {

/// One utterance: pre-tokenized ids, one acoustic/visual vector per word and
/// a sentiment intensity label in [-3, +3].
struct MultimodalExample {
  std::vector<std::size_t> tokens;
  std::vector<std::vector<double>> acoustic;  // N × d_a
  std::vector<std::vector<double>> visual;    // N × d_v
  double label = 0.0;

  std::size_t size() const { return tokens.size(); }
};

// Throws ParseError naming the offending line/field on invariant violations.
void validate_example(const MultimodalExample& ex, std::size_t line_no);

/// JSON Lines interchange format: one example per line with fields `tokens`,
/// `acoustic`, `visual`, `label`. UTF-8, no BOM.
std::vector<MultimodalExample> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<MultimodalExample>& examples);
std::string example_to_json_line(const MultimodalExample& ex);
MultimodalExample example_from_json_line(const std::string& line, std::size_t line_no);

/// Synthetic multimodal sentiment generator. The label blends a lexical
/// signal (count difference of two designated sentiment tokens) with a
/// nonverbal signal (mean of the first acoustic and visual channels):
///   label = clip(3·[(1−λ)·tanh(c_pos − c_neg) + λ·tanh(mean_a0 + mean_v0)] + noise, −3, 3)
/// Token, nonverbal and noise draws come from independent per-example
/// streams, so resampling one leaves the others untouched.
struct SynthConfig {
  std::size_t n_examples = 2000;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::size_t vocab_size = 256;
  std::size_t d_a = 5;
  std::size_t d_v = 7;
  double lambda_nv = 0.5;   // fraction of label signal carried by nonverbal channels
  double noise_sigma = 0.1;
  std::uint64_t seed = 42;

  std::size_t pos_token = 1;
  std::size_t neg_token = 2;
  double sentiment_rate = 0.15;  // per-position injection rate for each sentiment token

  // Salts select alternative sub-streams without touching the others; used to
  // probe which modality the labels depend on.
  std::uint64_t token_stream_salt = 0;
  std::uint64_t nv_stream_salt = 0;

  void validate() const;
};

std::vector<MultimodalExample> generate_synthetic(const SynthConfig& cfg);

}  // namespace mag
