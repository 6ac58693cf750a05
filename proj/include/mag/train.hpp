#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mag/data.hpp"
#include "mag/encoder.hpp"
#include "mag/metrics.hpp"
#include "mag/tensor.hpp"

namespace mag {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t grad_accum_steps = 1;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

/// Adam moments for one flat parameter array.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// Optimizer state over a fixed parameter list; step counts updates and is
/// incremented before bias correction.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<AdamMoments> moments;

  static AdamState init(const std::vector<Tensor>& params);
};

/// Bias-corrected Adam update of one array; `step` is the already-incremented
/// update count.
void adam_update_array(std::vector<double>& theta, const std::vector<double>& grad,
                       AdamMoments& moments, std::uint64_t step, double lr, double beta1,
                       double beta2, double eps);

/// One optimizer step over all parameters from their accumulated grads.
void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr);

struct EpochStats {
  double train_loss = 0.0;  // mean absolute error over the epoch
  std::optional<MetricsReport> val;
};
using TrainHistory = std::vector<EpochStats>;

std::string history_to_json(const TrainHistory& history);

/// L1-loss training with gradient accumulation: per-example gradients are
/// averaged over the grad_accum_steps × batch_size examples of each update
/// group, so accumulation is equivalent to a larger batch. Deterministic for
/// a fixed seed/config/dataset. Throws on empty datasets and aborts with a
/// diagnostic on non-finite loss.
TrainHistory train_model(EncoderModel& model, const std::vector<MultimodalExample>& train_set,
                         const std::vector<MultimodalExample>* val_set, const TrainConfig& cfg);

std::vector<double> predict_dataset(const EncoderModel& model,
                                    const std::vector<MultimodalExample>& ds);

MetricsReport evaluate(const EncoderModel& model, const std::vector<MultimodalExample>& ds);

}  // namespace mag
