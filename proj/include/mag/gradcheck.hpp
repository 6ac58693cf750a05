#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mag/encoder.hpp"

namespace mag {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;
};

/// Compares backward gradients of a squared-error scalar head against central
/// finite differences over every trainable parameter of the model. Inputs are
/// drawn from `input_seed`; eval mode is used so the check is deterministic.
GradCheckReport gradcheck_model(const EncoderConfig& cfg, std::uint64_t model_seed = 7,
                                std::uint64_t input_seed = 1, double h = 1e-5,
                                std::size_t n_words = 4);

}  // namespace mag
