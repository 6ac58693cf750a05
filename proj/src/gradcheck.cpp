#include "mag/gradcheck.hpp"

#include <cmath>

#include "mag/errors.hpp"
#include "mag/tensor.hpp"

namespace mag {

GradCheckReport gradcheck_model(const EncoderConfig& cfg, std::uint64_t model_seed,
                                std::uint64_t input_seed, double h, std::size_t n_words) {
  EncoderModel model(cfg, model_seed);
  const std::size_t n = std::min(n_words, cfg.max_len > 1 ? cfg.max_len - 1 : 1);

  Rng input_rng(derive_seed(input_seed, "gradcheck_input"));
  std::vector<std::size_t> tokens(n);
  for (auto& t : tokens) t = input_rng.uniform_int(3, cfg.vocab_size - 1);
  std::vector<double> a_data(n * cfg.d_a);
  for (auto& x : a_data) x = input_rng.normal(0.0, 0.5);
  std::vector<double> v_data(n * cfg.d_v);
  for (auto& x : v_data) x = input_rng.normal(0.0, 0.5);
  const double target = 0.7;

  const auto& registry = model.named_parameters();

  auto forward_loss = [&]() {
    Rng rng(0);  // eval mode consumes no randomness
    Tensor a = Tensor::from_data(a_data, {n, cfg.d_a});
    Tensor v = Tensor::from_data(v_data, {n, cfg.d_v});
    Tensor pred = model.forward(tokens, a, v, Mode::Eval, rng);
    Tensor diff = add_const(pred, -target);
    return mul(diff, diff);
  };

  // analytic gradients
  model.zero_grads();
  forward_loss().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(registry.size());
  for (const auto& [name, t] : registry) analytic.push_back(t.grad());

  // finite differences, parameter array by parameter array
  GradCheckReport report;
  report.per_param.reserve(registry.size());
  {
    NoGradGuard no_grad;
    for (std::size_t pi = 0; pi < registry.size(); ++pi) {
      auto& tensor = const_cast<Tensor&>(registry[pi].second);
      std::vector<double>& theta = tensor.data();
      GradCheckEntry entry;
      entry.name = registry[pi].first;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + h;
        const double fp = forward_loss().item();
        theta[i] = orig - h;
        const double fm = forward_loss().item();
        theta[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        entry.max_rel_err = std::max(entry.max_rel_err, relative_error(analytic[pi][i], fd));
      }
      report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
      report.per_param.push_back(std::move(entry));
    }
  }
  model.zero_grads();
  return report;
}

}  // namespace mag
