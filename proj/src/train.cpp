#include "mag/train.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "mag/errors.hpp"

namespace mag {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be nonnegative");
  if (grad_accum_steps == 0) throw ConfigError("grad_accum_steps must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
  AdamState state;
  state.moments.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.moments[i].m.assign(params[i].numel(), 0.0);
    state.moments[i].v.assign(params[i].numel(), 0.0);
  }
  return state;
}

void adam_update_array(std::vector<double>& theta, const std::vector<double>& grad,
                       AdamMoments& moments, std::uint64_t step, double lr, double beta1,
                       double beta2, double eps) {
  if (theta.size() != grad.size() || theta.size() != moments.m.size()) {
    throw DimensionError("adam update: parameter/gradient/moment sizes disagree (" +
                         std::to_string(theta.size()) + ", " + std::to_string(grad.size()) +
                         ", " + std::to_string(moments.m.size()) + ")");
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    moments.m[i] = beta1 * moments.m[i] + (1.0 - beta1) * g;
    moments.v[i] = beta2 * moments.v[i] + (1.0 - beta2) * g * g;
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr) {
  if (params.size() != state.moments.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.moments.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = const_cast<Tensor&>(params[i]);
    adam_update_array(p.data(), p.grad(), state.moments[i], state.step, lr, state.beta1,
                      state.beta2, state.eps);
  }
}

std::string history_to_json(const TrainHistory& history) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < history.size(); ++e) {
    nlohmann::ordered_json j;
    j["epoch"] = e + 1;
    j["train_loss"] = history[e].train_loss;
    if (history[e].val.has_value()) {
      j["val"] = nlohmann::ordered_json::parse(history[e].val->to_json());
    }
    arr.push_back(std::move(j));
  }
  return arr.dump();
}

namespace {

Tensor example_inputs(const MultimodalExample& ex, std::size_t d, bool acoustic) {
  return EncoderModel::rows_to_tensor(acoustic ? ex.acoustic : ex.visual, d);
}

}  // namespace

TrainHistory train_model(EncoderModel& model, const std::vector<MultimodalExample>& train_set,
                         const std::vector<MultimodalExample>* val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("train_model: empty dataset");

  const auto& ecfg = model.config();
  const std::vector<Tensor> params = model.parameter_tensors();
  AdamState state = AdamState::init(params);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainHistory history;
  history.reserve(cfg.epochs);
  const std::size_t group_size = cfg.batch_size * cfg.grad_accum_steps;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = shuffle_rng.uniform_int(0, i - 1);
        std::swap(order[i - 1], order[j]);
      }
    }

    double epoch_abs_err = 0.0;
    std::size_t start = 0;
    while (start < n) {
      const std::size_t group_end = std::min(start + group_size, n);
      const double inv_group = 1.0 / static_cast<double>(group_end - start);
      model.zero_grads();

      for (std::size_t ms = start; ms < group_end; ms += cfg.batch_size) {
        const std::size_t me = std::min(ms + cfg.batch_size, group_end);
        std::vector<Tensor> errors;
        errors.reserve(me - ms);
        for (std::size_t k = ms; k < me; ++k) {
          const MultimodalExample& ex = train_set[order[k]];
          Tensor a = example_inputs(ex, ecfg.d_a, true);
          Tensor v = example_inputs(ex, ecfg.d_v, false);
          Tensor pred = model.forward(ex.tokens, a, v, Mode::Train, dropout_rng);
          Tensor err = abs_elem(add_const(pred, -ex.label));
          epoch_abs_err += err.item();
          errors.push_back(std::move(err));
        }
        Tensor micro_loss = scale(sum_all(stack_scalars(errors)), inv_group);
        const double loss_value = micro_loss.item();
        if (!std::isfinite(loss_value)) {
          throw std::runtime_error("training aborted: non-finite loss " +
                                   std::to_string(loss_value) + " at epoch " +
                                   std::to_string(epoch + 1) + ", example offset " +
                                   std::to_string(ms));
        }
        micro_loss.backward();
      }
      adam_step(params, state, cfg.learning_rate);
      start = group_end;
    }
    model.zero_grads();

    EpochStats stats;
    stats.train_loss = epoch_abs_err / static_cast<double>(n);
    if (!std::isfinite(stats.train_loss)) {
      throw std::runtime_error("training aborted: non-finite epoch loss at epoch " +
                               std::to_string(epoch + 1));
    }
    if (val_set && !val_set->empty()) stats.val = evaluate(model, *val_set);
    history.push_back(std::move(stats));
  }
  return history;
}

std::vector<double> predict_dataset(const EncoderModel& model,
                                    const std::vector<MultimodalExample>& ds) {
  std::vector<double> preds;
  preds.reserve(ds.size());
  for (const auto& ex : ds) preds.push_back(model.predict(ex.tokens, ex.acoustic, ex.visual));
  return preds;
}

MetricsReport evaluate(const EncoderModel& model, const std::vector<MultimodalExample>& ds) {
  if (ds.empty()) throw ContractError("evaluate: empty dataset");
  std::vector<double> labels;
  labels.reserve(ds.size());
  for (const auto& ex : ds) labels.push_back(ex.label);
  return compute_metrics(predict_dataset(model, ds), labels);
}

}  // namespace mag
