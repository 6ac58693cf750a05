#include "mag/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "mag/errors.hpp"

namespace mag {

namespace {

struct BinaryCounts {
  std::size_t matches = 0;
  std::size_t total = 0;
  // confusion for the positive class; negative-class counts follow by symmetry
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

BinaryCounts count_binary(const std::vector<bool>& pred_cls, const std::vector<bool>& label_cls) {
  BinaryCounts c;
  c.total = pred_cls.size();
  for (std::size_t i = 0; i < pred_cls.size(); ++i) {
    if (pred_cls[i] == label_cls[i]) ++c.matches;
    if (pred_cls[i] && label_cls[i]) ++c.tp;
    if (pred_cls[i] && !label_cls[i]) ++c.fp;
    if (!pred_cls[i] && label_cls[i]) ++c.fn;
    if (!pred_cls[i] && !label_cls[i]) ++c.tn;
  }
  return c;
}

double f1_from(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) +
                       static_cast<double>(fn);
  return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
}

double f1_score(const BinaryCounts& c, F1Kind kind) {
  const double f1_pos = f1_from(c.tp, c.fp, c.fn);
  if (kind == F1Kind::BinaryPositive) return f1_pos;
  const double f1_neg = f1_from(c.tn, c.fn, c.fp);
  const std::size_t sup_pos = c.tp + c.fn;
  const std::size_t sup_neg = c.tn + c.fp;
  return (static_cast<double>(sup_pos) * f1_pos + static_cast<double>(sup_neg) * f1_neg) /
         static_cast<double>(c.total);
}

}  // namespace

MetricsReport compute_metrics(const std::vector<double>& preds,
                              const std::vector<double>& labels, F1Kind f1_kind) {
  if (preds.size() != labels.size()) {
    throw ContractError("compute_metrics: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw ContractError("compute_metrics: empty input");

  const std::size_t n = preds.size();
  MetricsReport report;

  double abs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) abs_sum += std::fabs(preds[i] - labels[i]);
  report.mae = abs_sum / static_cast<double>(n);

  double mean_p = 0.0, mean_l = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_p += preds[i];
    mean_l += labels[i];
  }
  mean_p /= static_cast<double>(n);
  mean_l /= static_cast<double>(n);
  double cov = 0.0, var_p = 0.0, var_l = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = preds[i] - mean_p;
    const double dl = labels[i] - mean_l;
    cov += dp * dl;
    var_p += dp * dp;
    var_l += dl * dl;
  }
  if (var_p > 0.0 && var_l > 0.0) report.corr = cov / std::sqrt(var_p * var_l);

  {
    std::vector<bool> pc(n), lc(n);
    for (std::size_t i = 0; i < n; ++i) {
      pc[i] = preds[i] >= 0.0;
      lc[i] = labels[i] >= 0.0;
    }
    const BinaryCounts c = count_binary(pc, lc);
    report.ba_nonneg = static_cast<double>(c.matches) / static_cast<double>(c.total);
    report.f1_nonneg = f1_score(c, f1_kind);
  }
  {
    std::vector<bool> pc, lc;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == 0.0) continue;
      pc.push_back(preds[i] > 0.0);
      lc.push_back(labels[i] > 0.0);
    }
    if (pc.empty()) {
      throw ContractError("compute_metrics: the excl-zero convention needs at least one "
                          "example with label != 0");
    }
    const BinaryCounts c = count_binary(pc, lc);
    report.ba_excl_zero = static_cast<double>(c.matches) / static_cast<double>(c.total);
    report.f1_excl_zero = f1_score(c, f1_kind);
  }
  return report;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["ba_nonneg"] = ba_nonneg;
  j["ba_excl_zero"] = ba_excl_zero;
  j["f1_nonneg"] = f1_nonneg;
  j["f1_excl_zero"] = f1_excl_zero;
  j["mae"] = mae;
  if (corr.has_value())
    j["corr"] = *corr;
  else
    j["corr"] = nullptr;
  return j.dump();
}

}  // namespace mag
