#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mag {

enum class F1Kind { Weighted, BinaryPositive };

/// Regression metrics plus sign-thresholded classification metrics under the
/// two conventions used in the multimodal sentiment literature:
///   - nonneg: every example kept, class = (value >= 0), on predictions and
///     labels alike (a zero label falls in the non-negative class);
///   - excl_zero: examples with label == 0 dropped, class = (value > 0).
struct MetricsReport {
  double ba_nonneg = 0.0;
  double ba_excl_zero = 0.0;
  double f1_nonneg = 0.0;
  double f1_excl_zero = 0.0;
  double mae = 0.0;
  std::optional<double> corr;  // empty when either side has zero variance

  std::string to_json() const;
};

MetricsReport compute_metrics(const std::vector<double>& preds,
                              const std::vector<double>& labels,
                              F1Kind f1_kind = F1Kind::Weighted);

}  // namespace mag
