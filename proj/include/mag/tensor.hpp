#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mag/rng.hpp"

namespace mag {

namespace detail {
struct TensorNode;
}

/// Dense 64-bit float tensor participating in a reverse-mode differentiation
/// graph. Copies are shallow handles to the same node; ops on tensors whose
/// inputs require grad record the adjoint closure needed for backward().
///
/// Gradients of requires-grad leaves accumulate across backward() calls
/// (this is what gradient accumulation over micro-batches relies on); call
/// zero_grad() between optimizer steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(std::vector<double> data, std::vector<std::size_t> shape,
                          bool requires_grad = false);
  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // entries i.i.d. uniform(-bound, bound)
  static Tensor uniform_init(std::vector<std::size_t> shape, double bound, Rng& rng,
                             bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t numel() const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only
  std::vector<double>& data();
  const std::vector<double>& data() const;
  bool requires_grad() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();
  double item() const;  // numel() == 1
  std::uint64_t id() const;
  const std::string& op() const;

  /// Reverse-mode sweep from a scalar. Populates grad of every requires-grad
  /// leaf reachable through the recorded graph; leaf grads accumulate across
  /// calls. Throws ContractError on non-scalar tensors.
  void backward() const;

  detail::TensorNode* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Suspends graph recording on this thread while alive. Ops behave as if no
/// input required grad; used by finite-difference evaluation and inference.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- primitive ops ---------------------------------------------------------
// Shapes are validated; violations throw DimensionError naming both shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor div_elem(const Tensor& a, const Tensor& b);     // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);       // [m×k]·[k×n]
Tensor transpose(const Tensor& a);                     // 2-D
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs_elem(const Tensor& a);                      // subgradient 0 at 0
Tensor min_const(const Tensor& a, double cap);         // tie passes gradient
Tensor softmax_rows(const Tensor& a);                  // row-stable softmax
Tensor sum_all(const Tensor& a);                       // -> scalar
Tensor mean_all(const Tensor& a);                      // -> scalar

// y = gain ⊙ (x − mean) / sqrt(var + eps) + bias per row (population variance);
// x is 1-D (one row) or 2-D (each row independently), gain/bias are 1-D [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor l2_norm(const Tensor& x);        // -> scalar; adjoint x/‖x‖, zero at 0
Tensor row_l2_norms(const Tensor& x);   // [m×n] -> [m]

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);  // numel preserved
Tensor add_row_broadcast(const Tensor& x, const Tensor& row);   // [m×n] + [n]
Tensor add_scalar_tensor(const Tensor& x, const Tensor& s);     // broadcast s (numel 1)
Tensor scale_rows(const Tensor& x, const Tensor& s);            // row i scaled by s[i]
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);  // [c0, c1)
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);  // [r0, r1)
Tensor stack_scalars(const std::vector<Tensor>& xs);            // n scalars -> [n]
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids);

// Inverted dropout: train mode masks with prob p and scales kept entries by
// 1/(1-p); eval mode is the identity. The mask consumes `rng` sequentially.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);

// ---- graph introspection ----------------------------------------------------

struct GraphRecord {
  std::uint64_t output_id;
  std::string op;                        // empty for leaves
  std::vector<std::uint64_t> input_ids;
};

/// Topologically ordered record of the primitive applications reaching root
/// (inputs always precede their consumers). backward() traverses this order
/// in exact reverse.
std::vector<GraphRecord> record_graph(const Tensor& root);

// ---- gradient-check oracle --------------------------------------------------

/// Central differences (f(θ+h·e_i) − f(θ−h·e_i)) / (2h) per coordinate.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double h = 1e-5);

/// |a−b| / max(floor, |a|, |b|); the comparison used by all gradient checks.
double relative_error(double a, double b, double floor = 1e-6);

}  // namespace mag
