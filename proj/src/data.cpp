#include "mag/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mag/errors.hpp"
#include "mag/rng.hpp"

namespace mag {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string at_line(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

}  // namespace

void validate_example(const MultimodalExample& ex, std::size_t line_no) {
  if (ex.tokens.empty()) throw ParseError(at_line(line_no) + "field 'tokens' must be non-empty");
  if (ex.acoustic.size() != ex.tokens.size()) {
    throw ParseError(at_line(line_no) + "field 'acoustic' has " +
                     std::to_string(ex.acoustic.size()) + " rows for " +
                     std::to_string(ex.tokens.size()) + " tokens");
  }
  if (ex.visual.size() != ex.tokens.size()) {
    throw ParseError(at_line(line_no) + "field 'visual' has " +
                     std::to_string(ex.visual.size()) + " rows for " +
                     std::to_string(ex.tokens.size()) + " tokens");
  }
  for (std::size_t i = 1; i < ex.acoustic.size(); ++i) {
    if (ex.acoustic[i].size() != ex.acoustic[0].size())
      throw ParseError(at_line(line_no) + "field 'acoustic' has ragged rows");
  }
  for (std::size_t i = 1; i < ex.visual.size(); ++i) {
    if (ex.visual[i].size() != ex.visual[0].size())
      throw ParseError(at_line(line_no) + "field 'visual' has ragged rows");
  }
  if (!std::isfinite(ex.label) || ex.label < -3.0 || ex.label > 3.0) {
    throw ParseError(at_line(line_no) + "field 'label' must lie in [-3, 3], got " +
                     std::to_string(ex.label));
  }
}

MultimodalExample example_from_json_line(const std::string& line, std::size_t line_no) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw ParseError(at_line(line_no) + e.what());
  }
  MultimodalExample ex;
  try {
    for (const auto& t : j.at("tokens")) ex.tokens.push_back(t.get<std::size_t>());
    for (const auto& row : j.at("acoustic"))
      ex.acoustic.push_back(row.get<std::vector<double>>());
    for (const auto& row : j.at("visual")) ex.visual.push_back(row.get<std::vector<double>>());
    ex.label = j.at("label").get<double>();
  } catch (const std::exception& e) {
    throw ParseError(at_line(line_no) + e.what());
  }
  validate_example(ex, line_no);
  return ex;
}

std::string example_to_json_line(const MultimodalExample& ex) {
  ordered_json j;
  j["tokens"] = ex.tokens;
  j["acoustic"] = ex.acoustic;
  j["visual"] = ex.visual;
  j["label"] = ex.label;
  return j.dump();
}

std::vector<MultimodalExample> load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  std::vector<MultimodalExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    examples.push_back(example_from_json_line(line, line_no));
  }
  return examples;
}

void save_dataset(const std::string& path, const std::vector<MultimodalExample>& examples) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& ex : examples) os << example_to_json_line(ex) << '\n';
  if (!os) throw IoError("failed writing dataset '" + path + "'");
}

void SynthConfig::validate() const {
  if (n_examples == 0) throw ConfigError("n_examples must be positive");
  if (min_len == 0 || min_len > max_len) throw ConfigError("invalid sequence length range");
  if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4");
  if (d_a == 0 || d_v == 0) throw ConfigError("d_a and d_v must be positive");
  if (lambda_nv < 0.0 || lambda_nv > 1.0) throw ConfigError("lambda_nv must be in [0, 1]");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be nonnegative");
  if (pos_token >= vocab_size || neg_token >= vocab_size || pos_token == neg_token)
    throw ConfigError("sentiment token ids must be distinct and inside the vocabulary");
  if (sentiment_rate < 0.0 || sentiment_rate > 0.5)
    throw ConfigError("sentiment_rate must be in [0, 0.5]");
}

std::vector<MultimodalExample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<MultimodalExample> out;
  out.reserve(cfg.n_examples);
  for (std::size_t i = 0; i < cfg.n_examples; ++i) {
    Rng len_rng(derive_seed(cfg.seed, "length", i));
    Rng tok_rng(derive_seed(derive_seed(cfg.seed, "tokens", i), cfg.token_stream_salt));
    Rng nv_rng(derive_seed(derive_seed(cfg.seed, "nonverbal", i), cfg.nv_stream_salt));
    Rng noise_rng(derive_seed(cfg.seed, "noise", i));

    MultimodalExample ex;
    const std::size_t n = len_rng.uniform_int(cfg.min_len, cfg.max_len);

    std::ptrdiff_t count_diff = 0;
    ex.tokens.reserve(n);
    for (std::size_t w = 0; w < n; ++w) {
      const double u = tok_rng.uniform();
      if (u < cfg.sentiment_rate) {
        ex.tokens.push_back(cfg.pos_token);
        ++count_diff;
      } else if (u < 2.0 * cfg.sentiment_rate) {
        ex.tokens.push_back(cfg.neg_token);
        --count_diff;
      } else {
        ex.tokens.push_back(tok_rng.uniform_int(3, cfg.vocab_size - 1));
      }
    }

    double mean_a0 = 0.0, mean_v0 = 0.0;
    ex.acoustic.resize(n);
    ex.visual.resize(n);
    for (std::size_t w = 0; w < n; ++w) {
      ex.acoustic[w].resize(cfg.d_a);
      for (std::size_t k = 0; k < cfg.d_a; ++k) ex.acoustic[w][k] = nv_rng.normal();
      ex.visual[w].resize(cfg.d_v);
      for (std::size_t k = 0; k < cfg.d_v; ++k) ex.visual[w][k] = nv_rng.normal();
      mean_a0 += ex.acoustic[w][0];
      mean_v0 += ex.visual[w][0];
    }
    mean_a0 /= static_cast<double>(n);
    mean_v0 /= static_cast<double>(n);

    const double s_text = std::tanh(static_cast<double>(count_diff));
    const double s_nv = std::tanh(mean_a0 + mean_v0);
    const double noise = cfg.noise_sigma > 0.0 ? noise_rng.normal(0.0, cfg.noise_sigma) : 0.0;
    const double raw = 3.0 * ((1.0 - cfg.lambda_nv) * s_text + cfg.lambda_nv * s_nv) + noise;
    ex.label = std::clamp(raw, -3.0, 3.0);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace mag
