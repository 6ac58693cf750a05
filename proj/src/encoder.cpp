#include "mag/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mag/errors.hpp"

namespace mag {

using ordered_json = nlohmann::ordered_json;

ClsPosition cls_position_from_string(const std::string& s) {
  if (s == "front") return ClsPosition::Front;
  if (s == "end") return ClsPosition::End;
  throw ConfigError("unknown cls position '" + s + "' (expected front or end)");
}

std::string to_string(ClsPosition c) { return c == ClsPosition::Front ? "front" : "end"; }

InjectionSpec injection_from_string(const std::string& s) {
  InjectionSpec inj;
  if (s == "none") {
    inj.kind = Injection::None;
  } else if (s == "E" || s == "e" || s == "embedding") {
    inj.kind = Injection::Embedding;
  } else if (s == "all" || s == "A") {
    inj.kind = Injection::All;
  } else {
    try {
      const int j = std::stoi(s);
      if (j < 1) throw ConfigError("injection layer must be >= 1, got " + s);
      inj.kind = Injection::Layer;
      inj.layer = static_cast<std::size_t>(j);
    } catch (const std::invalid_argument&) {
      throw ConfigError("unknown injection '" + s + "' (expected none, E, all or a layer index)");
    }
  }
  return inj;
}

std::string to_string(const InjectionSpec& inj) {
  switch (inj.kind) {
    case Injection::None: return "none";
    case Injection::Embedding: return "E";
    case Injection::All: return "all";
    case Injection::Layer: return std::to_string(inj.layer);
  }
  return "none";
}

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 || max_len == 0)
    throw ConfigError("encoder dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  if (d_a == 0 || d_v == 0) throw ConfigError("d_a and d_v must be positive");
  if (injection.kind == Injection::Layer &&
      (injection.layer < 1 || injection.layer > num_layers))
    throw ConfigError("injection layer " + std::to_string(injection.layer) +
                      " outside [1, " + std::to_string(num_layers) + "]");
  if (hidden_dropout_p < 0.0 || hidden_dropout_p >= 1.0)
    throw ConfigError("hidden_dropout_p must be in [0, 1)");
  if (mag_dropout_p >= 1.0) throw ConfigError("mag_dropout_p must be below 1");
  if (beta_shift <= 0.0) throw ConfigError("beta_shift must be positive");
  if (eps_guard <= 0.0 || ln_eps <= 0.0) throw ConfigError("eps values must be positive");
  if (fusion != Fusion::None && injection.kind != Injection::None)
    throw ConfigError("input-level fusion and gate injection are mutually exclusive");
}

std::string EncoderConfig::to_json() const {
  ordered_json j;
  j["num_layers"] = num_layers;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["vocab_size"] = vocab_size;
  j["max_len"] = max_len;
  j["d_a"] = d_a;
  j["d_v"] = d_v;
  j["cls_position"] = to_string(cls_position);
  j["injection"] = to_string(injection);
  j["fusion"] = to_string(fusion);
  j["hidden_dropout_p"] = hidden_dropout_p;
  j["beta_shift"] = beta_shift;
  j["mag_dropout_p"] = mag_dropout_p;
  j["eps_guard"] = eps_guard;
  j["ln_eps"] = ln_eps;
  j["gate_activation"] = to_string(gate_activation);
  j["share_mag_params"] = share_mag_params;
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("encoder config: ") + e.what());
  }
  EncoderConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.d_a = j.at("d_a").get<std::size_t>();
  c.d_v = j.at("d_v").get<std::size_t>();
  c.cls_position = cls_position_from_string(j.at("cls_position").get<std::string>());
  c.injection = injection_from_string(j.at("injection").get<std::string>());
  c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
  c.hidden_dropout_p = j.at("hidden_dropout_p").get<double>();
  c.beta_shift = j.at("beta_shift").get<double>();
  c.mag_dropout_p = j.at("mag_dropout_p").get<double>();
  c.eps_guard = j.at("eps_guard").get<double>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.gate_activation = gate_activation_from_string(j.at("gate_activation").get<std::string>());
  c.share_mag_params = j.at("share_mag_params").get<bool>();
  c.validate();
  return c;
}

const Tensor* ForwardTrace::find(const std::string& label) const {
  for (const auto& [name, t] : stages)
    if (name == label) return &t;
  return nullptr;
}

namespace {

constexpr std::size_t kClsTokenId = 0;

Tensor uniform_param(std::uint64_t seed, const std::string& name, std::size_t rows,
                     std::size_t cols) {
  Rng rng(derive_seed(seed, name));
  return Tensor::uniform_init({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)), rng,
                              true);
}

}  // namespace

EncoderModel::EncoderModel(EncoderConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;

  token_emb_ = uniform_param(init_seed, "token_emb", cfg_.vocab_size, d);
  pos_emb_ = uniform_param(init_seed, "pos_emb", cfg_.max_len, d);
  {
    Rng rng(derive_seed(init_seed, "seg_emb"));
    seg_emb_ = Tensor::uniform_init({d}, 1.0 / std::sqrt(static_cast<double>(d)), rng, true);
  }

  layers_.reserve(cfg_.num_layers);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l + 1) + ".";
    EncoderLayerParams lp;
    lp.w_q = uniform_param(init_seed, pre + "w_q", d, d);
    lp.b_q = Tensor::zeros({d}, true);
    lp.w_k = uniform_param(init_seed, pre + "w_k", d, d);
    lp.b_k = Tensor::zeros({d}, true);
    lp.w_v = uniform_param(init_seed, pre + "w_v", d, d);
    lp.b_v = Tensor::zeros({d}, true);
    lp.w_o = uniform_param(init_seed, pre + "w_o", d, d);
    lp.b_o = Tensor::zeros({d}, true);
    lp.ln1_gain = Tensor::full({d}, 1.0, true);
    lp.ln1_bias = Tensor::zeros({d}, true);
    lp.ffn_w1 = uniform_param(init_seed, pre + "ffn_w1", d, cfg_.d_ff);
    lp.ffn_b1 = Tensor::zeros({cfg_.d_ff}, true);
    lp.ffn_w2 = uniform_param(init_seed, pre + "ffn_w2", cfg_.d_ff, d);
    lp.ffn_b2 = Tensor::zeros({d}, true);
    lp.ln2_gain = Tensor::full({d}, 1.0, true);
    lp.ln2_bias = Tensor::zeros({d}, true);
    layers_.push_back(std::move(lp));
  }

  std::size_t n_sites = 0;
  switch (cfg_.injection.kind) {
    case Injection::None: n_sites = 0; break;
    case Injection::Embedding:
    case Injection::Layer: n_sites = 1; break;
    case Injection::All: n_sites = cfg_.share_mag_params ? 1 : cfg_.num_layers + 1; break;
  }
  for (std::size_t s = 0; s < n_sites; ++s) {
    mags_.push_back(MagParams::init(d, cfg_.d_a, cfg_.d_v, cfg_.beta_shift,
                                    cfg_.effective_mag_dropout(),
                                    derive_seed(init_seed, "mag_site", s)));
    mags_.back().eps_guard = cfg_.eps_guard;
    mags_.back().ln_eps = cfg_.ln_eps;
    mags_.back().activation = cfg_.gate_activation;
  }

  fusion_ = BaselineFusionParams::init(cfg_.fusion, d, cfg_.d_a, cfg_.d_v,
                                       derive_seed(init_seed, "fusion"));

  head_w_ = uniform_param(init_seed, "head_w", d, 1);
  head_b_ = Tensor::zeros({1}, true);

  build_registry();
}

void EncoderModel::build_registry() {
  registry_.clear();
  registry_.emplace_back("token_emb", token_emb_);
  registry_.emplace_back("pos_emb", pos_emb_);
  registry_.emplace_back("seg_emb", seg_emb_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l + 1) + ".";
    const auto& lp = layers_[l];
    registry_.emplace_back(pre + "w_q", lp.w_q);
    registry_.emplace_back(pre + "b_q", lp.b_q);
    registry_.emplace_back(pre + "w_k", lp.w_k);
    registry_.emplace_back(pre + "b_k", lp.b_k);
    registry_.emplace_back(pre + "w_v", lp.w_v);
    registry_.emplace_back(pre + "b_v", lp.b_v);
    registry_.emplace_back(pre + "w_o", lp.w_o);
    registry_.emplace_back(pre + "b_o", lp.b_o);
    registry_.emplace_back(pre + "ln1_gain", lp.ln1_gain);
    registry_.emplace_back(pre + "ln1_bias", lp.ln1_bias);
    registry_.emplace_back(pre + "ffn_w1", lp.ffn_w1);
    registry_.emplace_back(pre + "ffn_b1", lp.ffn_b1);
    registry_.emplace_back(pre + "ffn_w2", lp.ffn_w2);
    registry_.emplace_back(pre + "ffn_b2", lp.ffn_b2);
    registry_.emplace_back(pre + "ln2_gain", lp.ln2_gain);
    registry_.emplace_back(pre + "ln2_bias", lp.ln2_bias);
  }
  for (std::size_t s = 0; s < mags_.size(); ++s) {
    for (auto& kv : mags_[s].named_parameters("mag" + std::to_string(s) + "."))
      registry_.push_back(std::move(kv));
  }
  for (auto& kv : fusion_.named_parameters("fusion.")) registry_.push_back(std::move(kv));
  registry_.emplace_back("head_w", head_w_);
  registry_.emplace_back("head_b", head_b_);
}

std::size_t EncoderModel::cls_index(std::size_t n_words) const {
  return cfg_.cls_position == ClsPosition::Front ? 0 : n_words;
}

Tensor EncoderModel::embed(const std::vector<std::size_t>& tokens) const {
  const std::size_t n = tokens.size();
  if (n + 1 > cfg_.max_len) {
    throw DimensionError("sequence of " + std::to_string(n) + " words plus CLS exceeds max_len " +
                         std::to_string(cfg_.max_len));
  }
  std::vector<std::size_t> ids;
  ids.reserve(n + 1);
  if (cfg_.cls_position == ClsPosition::Front) ids.push_back(kClsTokenId);
  for (std::size_t t : tokens) {
    if (t >= cfg_.vocab_size) {
      throw DimensionError("token id " + std::to_string(t) + " out of vocabulary (size " +
                           std::to_string(cfg_.vocab_size) + ")");
    }
    ids.push_back(t);
  }
  if (cfg_.cls_position == ClsPosition::End) ids.push_back(kClsTokenId);

  Tensor tok = gather_rows(token_emb_, ids);
  Tensor pos = slice_rows(pos_emb_, 0, ids.size());
  return add_row_broadcast(add(tok, pos), seg_emb_);
}

Tensor EncoderModel::mha(std::size_t layer, const Tensor& x, Mode mode, Rng& rng) const {
  const auto& lp = layers_.at(layer - 1);
  const std::size_t d = cfg_.d_model;
  const std::size_t n_heads = cfg_.n_heads;
  const std::size_t d_head = d / n_heads;
  const bool train = mode == Mode::Train;

  Tensor q = add_row_broadcast(matmul(x, lp.w_q), lp.b_q);
  Tensor k = add_row_broadcast(matmul(x, lp.w_k), lp.b_k);
  Tensor v = add_row_broadcast(matmul(x, lp.w_v), lp.b_v);

  Tensor heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * d_head, c1 = (h + 1) * d_head;
    Tensor qh = slice_cols(q, c0, c1);
    Tensor kh = slice_cols(k, c0, c1);
    Tensor vh = slice_cols(v, c0, c1);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(d_head)));
    Tensor probs = dropout(softmax_rows(scores), cfg_.hidden_dropout_p, rng, train);
    Tensor oh = matmul(probs, vh);
    heads = h == 0 ? oh : concat_cols(heads, oh);
  }
  return add_row_broadcast(matmul(heads, lp.w_o), lp.b_o);
}

Tensor EncoderModel::encoder_layer_forward(std::size_t layer, const Tensor& x, Mode mode,
                                           Rng& rng) const {
  if (layer < 1 || layer > layers_.size()) {
    throw ContractError("encoder layer index " + std::to_string(layer) + " outside [1, " +
                        std::to_string(layers_.size()) + "]");
  }
  if (x.shape().size() != 2 || x.cols() != cfg_.d_model) {
    throw DimensionError("encoder layer expects [T x d_model] input");
  }
  const auto& lp = layers_[layer - 1];
  const bool train = mode == Mode::Train;

  Tensor attn = mha(layer, x, mode, rng);
  Tensor y = layer_norm(add(x, attn), lp.ln1_gain, lp.ln1_bias, cfg_.ln_eps);
  Tensor hidden = relu(add_row_broadcast(matmul(y, lp.ffn_w1), lp.ffn_b1));
  Tensor ffn_out = add_row_broadcast(matmul(hidden, lp.ffn_w2), lp.ffn_b2);
  ffn_out = dropout(ffn_out, cfg_.hidden_dropout_p, rng, train);
  return layer_norm(add(y, ffn_out), lp.ln2_gain, lp.ln2_bias, cfg_.ln_eps);
}

Tensor EncoderModel::run_layers(const Tensor& x, std::size_t from, std::size_t to, Mode mode,
                                Rng& rng) const {
  Tensor out = x;
  for (std::size_t l = from + 1; l <= to; ++l) out = encoder_layer_forward(l, out, mode, rng);
  return out;
}

const MagParams* EncoderModel::mag_for_site(std::size_t site) const {
  if (mags_.empty()) return nullptr;
  if (cfg_.share_mag_params || mags_.size() == 1) return &mags_[0];
  return &mags_.at(site);
}

const MagParams& EncoderModel::mag_at_site(std::size_t site) const {
  const MagParams* p = mag_for_site(site);
  if (!p) throw ContractError("model has no gate attachment");
  return *p;
}

MagParams& EncoderModel::mag_at_site(std::size_t site) {
  return const_cast<MagParams&>(static_cast<const EncoderModel*>(this)->mag_at_site(site));
}

Tensor EncoderModel::nonverbal_with_cls(const Tensor& seq, std::size_t dim,
                                        std::size_t n_words) const {
  if (seq.shape().size() != 2 || seq.cols() != dim || seq.rows() != n_words) {
    throw DimensionError("nonverbal sequence must be [" + std::to_string(n_words) + " x " +
                         std::to_string(dim) + "]");
  }
  Tensor cls_zero = Tensor::zeros({1, dim});
  return cfg_.cls_position == ClsPosition::Front ? concat_rows(cls_zero, seq)
                                                 : concat_rows(seq, cls_zero);
}

Tensor EncoderModel::forward(const std::vector<std::size_t>& tokens, const Tensor& a_seq,
                             const Tensor& v_seq, Mode mode, Rng& rng,
                             ForwardTrace* trace) const {
  const std::size_t n = tokens.size();
  if (n == 0) throw DimensionError("forward requires at least one word");
  if (a_seq.shape().size() != 2 || a_seq.rows() != n || v_seq.shape().size() != 2 ||
      v_seq.rows() != n) {
    throw DimensionError("nonverbal sequences must have one row per word (" + std::to_string(n) +
                         " words, got " + std::to_string(a_seq.rows()) + " acoustic and " +
                         std::to_string(v_seq.rows()) + " visual rows)");
  }

  Tensor a_full = nonverbal_with_cls(a_seq, cfg_.d_a, n);
  Tensor v_full = nonverbal_with_cls(v_seq, cfg_.d_v, n);

  Tensor x = embed(tokens);
  if (cfg_.fusion != Fusion::None) x = fuse_seq(x, a_full, v_full, fusion_);
  if (trace) trace->stages.emplace_back("embed", x);

  const auto inject_at = [&](std::size_t site) {
    return (cfg_.injection.kind == Injection::All) ||
           (site == 0 && cfg_.injection.kind == Injection::Embedding) ||
           (site > 0 && cfg_.injection.kind == Injection::Layer && cfg_.injection.layer == site);
  };

  if (inject_at(0)) {
    x = mag_forward_seq(x, a_full, v_full, *mag_for_site(0), mode, rng);
    if (trace) trace->stages.emplace_back("mag0", x);
  }
  for (std::size_t l = 1; l <= cfg_.num_layers; ++l) {
    x = encoder_layer_forward(l, x, mode, rng);
    if (trace) trace->stages.emplace_back("layer" + std::to_string(l), x);
    if (inject_at(l)) {
      x = mag_forward_seq(x, a_full, v_full, *mag_for_site(l), mode, rng);
      if (trace) trace->stages.emplace_back("mag" + std::to_string(l), x);
    }
  }

  Tensor cls_row = slice_rows(x, cls_index(n), cls_index(n) + 1);
  return add_scalar_tensor(matmul(cls_row, head_w_), head_b_);
}

Tensor EncoderModel::rows_to_tensor(const std::vector<std::vector<double>>& rows,
                                    std::size_t cols, bool requires_grad) {
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("row width mismatch building tensor");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor::from_data(std::move(flat), {rows.size(), cols}, requires_grad);
}

double EncoderModel::predict(const std::vector<std::size_t>& tokens,
                             const std::vector<std::vector<double>>& acoustic,
                             const std::vector<std::vector<double>>& visual) const {
  NoGradGuard no_grad;
  Rng rng(0);
  Tensor a = rows_to_tensor(acoustic, cfg_.d_a);
  Tensor v = rows_to_tensor(visual, cfg_.d_v);
  return forward(tokens, a, v, Mode::Eval, rng).item();
}

ParameterCounts EncoderModel::count_parameters() const {
  ParameterCounts counts;
  for (const auto& [name, t] : registry_) {
    if (name.rfind("mag", 0) == 0)
      counts.mag += t.numel();
    else if (name.rfind("fusion.", 0) == 0)
      counts.fusion += t.numel();
    else
      counts.encoder += t.numel();
  }
  return counts;
}

std::vector<Tensor> EncoderModel::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(registry_.size());
  for (const auto& [name, t] : registry_) out.push_back(t);
  return out;
}

void EncoderModel::zero_grads() const {
  for (const auto& [name, t] : registry_) const_cast<Tensor&>(t).zero_grad();
}

// ---- checkpoint I/O ------------------------------------------------------------
// Layout: magic "MAGCKPT1", u32 version, u64 config length + JSON bytes, u64
// array count, then per array u64 name length, name, u64 element count and the
// raw little-endian doubles. Registry order is fixed by construction, so
// save -> load -> save reproduces the file byte for byte.

namespace {

constexpr char kCkptMagic[8] = {'M', 'A', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw ParseError("checkpoint '" + path + "': truncated file");
  return value;
}

}  // namespace

void EncoderModel::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kCkptMagic, sizeof(kCkptMagic));
  write_pod(os, kCkptVersion);
  const std::string cfg_json = cfg_.to_json();
  write_pod(os, static_cast<std::uint64_t>(cfg_json.size()));
  os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  write_pod(os, static_cast<std::uint64_t>(registry_.size()));
  for (const auto& [name, t] : registry_) {
    write_pod(os, static_cast<std::uint64_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& d = t.data();
    write_pod(os, static_cast<std::uint64_t>(d.size()));
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

EncoderModel EncoderModel::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw ParseError("checkpoint '" + path + "': bad magic");
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != kCkptVersion)
    throw ParseError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  const auto cfg_len = read_pod<std::uint64_t>(is, path);
  std::string cfg_json(cfg_len, '\0');
  is.read(cfg_json.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw ParseError("checkpoint '" + path + "': truncated config");

  EncoderModel model(EncoderConfig::from_json(cfg_json), /*init_seed=*/0);

  const auto n_arrays = read_pod<std::uint64_t>(is, path);
  if (n_arrays != model.registry_.size()) {
    throw ParseError("checkpoint '" + path + "': expected " +
                     std::to_string(model.registry_.size()) + " arrays, found " +
                     std::to_string(n_arrays));
  }
  for (auto& [name, t] : model.registry_) {
    const auto name_len = read_pod<std::uint64_t>(is, path);
    std::string stored(name_len, '\0');
    is.read(stored.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw ParseError("checkpoint '" + path + "': truncated array name");
    if (stored != name)
      throw ParseError("checkpoint '" + path + "': array '" + stored + "' where '" + name +
                       "' expected");
    const auto count = read_pod<std::uint64_t>(is, path);
    auto& d = const_cast<Tensor&>(t).data();
    if (count != d.size())
      throw ParseError("checkpoint '" + path + "': array '" + name + "' has " +
                       std::to_string(count) + " values, expected " + std::to_string(d.size()));
    is.read(reinterpret_cast<char*>(d.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw ParseError("checkpoint '" + path + "': truncated array data");
  }
  return model;
}

}  // namespace mag
