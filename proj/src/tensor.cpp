#include "mag/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mag/errors.hpp"

namespace mag {

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // same length as data when requires_grad
  std::string op;            // empty for leaves
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void()> backward_fn;
  std::uint64_t id = 0;
};

}  // namespace detail

using detail::TensorNode;

namespace {

thread_local bool g_grad_enabled = true;

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::shared_ptr<TensorNode> make_node(std::vector<double> data,
                                      std::vector<std::size_t> shape,
                                      bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->data.size(), 0.0);
  node->id = next_node_id();
  return node;
}

TensorNode* req(const Tensor& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string("undefined tensor passed to ") + what);
  return t.node();
}

void require_2d(const TensorNode* n, const char* what) {
  if (n->shape.size() != 2) {
    throw DimensionError(std::string(what) + " expects a 2-D tensor, got " + shape_str(n->shape));
  }
}

// Builds the op output node; records inputs and the adjoint closure only when
// grad flows. `make_backward` receives the raw output node pointer and must
// capture whatever forward values the adjoint needs by value.
Tensor make_op(const char* op_name, std::vector<std::shared_ptr<TensorNode>> inputs,
               std::vector<double> data, std::vector<std::size_t> shape,
               const std::function<std::function<void()>(TensorNode*)>& make_backward) {
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in->requires_grad) {
        needs_grad = true;
        break;
      }
    }
  }
  auto node = make_node(std::move(data), std::move(shape), needs_grad);
  node->op = op_name;
  if (needs_grad) {
    node->inputs = std::move(inputs);
    node->backward_fn = make_backward(node.get());
  }
  return Tensor(std::move(node));
}

void accum(TensorNode* n, std::size_t i, double v) {
  if (n->requires_grad) n->grad[i] += v;
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::from_data(std::vector<double> data, std::vector<std::size_t> shape,
                         bool requires_grad) {
  return Tensor(make_node(std::move(data), std::move(shape), requires_grad));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), 0.0);
  return Tensor(make_node(std::move(d), std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), value);
  return Tensor(make_node(std::move(d), std::move(shape), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({value}, {1}, requires_grad);
}

Tensor Tensor::uniform_init(std::vector<std::size_t> shape, double bound, Rng& rng,
                            bool requires_grad) {
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = rng.uniform(-bound, bound);
  return Tensor(make_node(std::move(d), std::move(shape), requires_grad));
}

const std::vector<std::size_t>& Tensor::shape() const { return req(*this, "shape")->shape; }
std::size_t Tensor::numel() const { return req(*this, "numel")->data.size(); }

std::size_t Tensor::rows() const {
  auto* n = req(*this, "rows");
  require_2d(n, "rows");
  return n->shape[0];
}

std::size_t Tensor::cols() const {
  auto* n = req(*this, "cols");
  require_2d(n, "cols");
  return n->shape[1];
}

std::vector<double>& Tensor::data() { return req(*this, "data")->data; }
const std::vector<double>& Tensor::data() const { return req(*this, "data")->data; }
bool Tensor::requires_grad() const { return req(*this, "requires_grad")->requires_grad; }

std::vector<double>& Tensor::grad() {
  auto* n = req(*this, "grad");
  if (!n->requires_grad) throw ContractError("grad requested on tensor without requires_grad");
  return n->grad;
}

const std::vector<double>& Tensor::grad() const {
  return const_cast<Tensor*>(this)->grad();
}

void Tensor::zero_grad() {
  auto* n = req(*this, "zero_grad");
  if (n->requires_grad) std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

double Tensor::item() const {
  auto* n = req(*this, "item");
  if (n->data.size() != 1) {
    throw ContractError("item() requires numel 1, got shape " + shape_str(n->shape));
  }
  return n->data[0];
}

std::uint64_t Tensor::id() const { return req(*this, "id")->id; }
const std::string& Tensor::op() const { return req(*this, "op")->op; }

namespace {

// Topological order via iterative post-order DFS over the input edges; node
// order is deterministic for a fixed graph.
std::vector<TensorNode*> toposort(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->inputs.size()) {
      TensorNode* child = node->inputs[next_child].get();
      ++next_child;
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  auto* root = req(*this, "backward");
  if (root->data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;  // nothing reachable requires grad

  std::vector<TensorNode*> order = toposort(root);
  // Interior grads are per-sweep scratch; leaf grads persist and accumulate.
  for (TensorNode* n : order) {
    if (!n->inputs.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ops --------------------------------------------------------

namespace {

void require_same_shape(const TensorNode* a, const TensorNode* b, const char* what) {
  if (a->shape != b->shape) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto* an = req(a, "add");
  auto* bn = req(b, "add");
  require_same_shape(an, bn, "add");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] + bn->data[i];
  return make_op("add", {a.node_ptr(), b.node_ptr()}, std::move(out), an->shape,
                 [an, bn](TensorNode* self) {
                   return [self, an, bn]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i) {
                       accum(an, i, self->grad[i]);
                       accum(bn, i, self->grad[i]);
                     }
                   };
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto* an = req(a, "sub");
  auto* bn = req(b, "sub");
  require_same_shape(an, bn, "sub");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] - bn->data[i];
  return make_op("sub", {a.node_ptr(), b.node_ptr()}, std::move(out), an->shape,
                 [an, bn](TensorNode* self) {
                   return [self, an, bn]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i) {
                       accum(an, i, self->grad[i]);
                       accum(bn, i, -self->grad[i]);
                     }
                   };
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto* an = req(a, "mul");
  auto* bn = req(b, "mul");
  require_same_shape(an, bn, "mul");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] * bn->data[i];
  return make_op("mul", {a.node_ptr(), b.node_ptr()}, std::move(out), an->shape,
                 [an, bn](TensorNode* self) {
                   return [self, an, bn]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i) {
                       accum(an, i, bn->data[i] * self->grad[i]);
                       accum(bn, i, an->data[i] * self->grad[i]);
                     }
                   };
                 });
}

Tensor div_elem(const Tensor& a, const Tensor& b) {
  auto* an = req(a, "div_elem");
  auto* bn = req(b, "div_elem");
  require_same_shape(an, bn, "div_elem");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] / bn->data[i];
  return make_op("div", {a.node_ptr(), b.node_ptr()}, std::move(out), an->shape,
                 [an, bn](TensorNode* self) {
                   return [self, an, bn]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i) {
                       const double bv = bn->data[i];
                       accum(an, i, self->grad[i] / bv);
                       accum(bn, i, -an->data[i] / (bv * bv) * self->grad[i]);
                     }
                   };
                 });
}

Tensor scale(const Tensor& a, double c) {
  auto* an = req(a, "scale");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] * c;
  return make_op("scale", {a.node_ptr()}, std::move(out), an->shape,
                 [an, c](TensorNode* self) {
                   return [self, an, c]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i)
                       accum(an, i, c * self->grad[i]);
                   };
                 });
}

Tensor add_const(const Tensor& a, double c) {
  auto* an = req(a, "add_const");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] + c;
  return make_op("add_const", {a.node_ptr()}, std::move(out), an->shape,
                 [an](TensorNode* self) {
                   return [self, an]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i)
                       accum(an, i, self->grad[i]);
                   };
                 });
}

Tensor relu(const Tensor& a) {
  auto* an = req(a, "relu");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->data[i] > 0.0 ? an->data[i] : 0.0;
  return make_op("relu", {a.node_ptr()}, std::move(out), an->shape,
                 [an](TensorNode* self) {
                   return [self, an]() {
                     // subgradient 0 at the kink
                     for (std::size_t i = 0; i < self->grad.size(); ++i)
                       if (an->data[i] > 0.0) accum(an, i, self->grad[i]);
                   };
                 });
}

Tensor sigmoid(const Tensor& a) {
  auto* an = req(a, "sigmoid");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = an->data[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  const std::vector<double> y = out;
  return make_op("sigmoid", {a.node_ptr()}, std::move(out), an->shape,
                 [an, y](TensorNode* self) {
                   return [self, an, y]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i)
                       accum(an, i, y[i] * (1.0 - y[i]) * self->grad[i]);
                   };
                 });
}

Tensor abs_elem(const Tensor& a) {
  auto* an = req(a, "abs_elem");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(an->data[i]);
  return make_op("abs", {a.node_ptr()}, std::move(out), an->shape,
                 [an](TensorNode* self) {
                   return [self, an]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i) {
                       const double x = an->data[i];
                       if (x > 0.0)
                         accum(an, i, self->grad[i]);
                       else if (x < 0.0)
                         accum(an, i, -self->grad[i]);
                     }
                   };
                 });
}

Tensor min_const(const Tensor& a, double cap) {
  auto* an = req(a, "min_const");
  std::vector<double> out(an->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(an->data[i], cap);
  return make_op("min_const", {a.node_ptr()}, std::move(out), an->shape,
                 [an, cap](TensorNode* self) {
                   return [self, an, cap]() {
                     // at the tie the unclamped branch wins
                     for (std::size_t i = 0; i < self->grad.size(); ++i)
                       if (an->data[i] <= cap) accum(an, i, self->grad[i]);
                   };
                 });
}

// ---- matrix ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto* an = req(a, "matmul");
  auto* bn = req(b, "matmul");
  require_2d(an, "matmul");
  require_2d(bn, "matmul");
  const std::size_t m = an->shape[0], k = an->shape[1];
  const std::size_t k2 = bn->shape[0], n = bn->shape[1];
  if (k != k2) {
    throw DimensionError("matmul: inner extents disagree, " + shape_str(an->shape) + " vs " +
                         shape_str(bn->shape));
  }
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = an->data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bn->data.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op("matmul", {a.node_ptr(), b.node_ptr()}, std::move(out), {m, n},
                 [an, bn, m, k, n](TensorNode* self) {
                   return [self, an, bn, m, k, n]() {
                     // dA = dC·Bᵀ
                     if (an->requires_grad) {
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           double s = 0.0;
                           const double* grow = self->grad.data() + i * n;
                           const double* brow = bn->data.data() + p * n;
                           for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                           an->grad[i * k + p] += s;
                         }
                       }
                     }
                     // dB = Aᵀ·dC
                     if (bn->requires_grad) {
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* arow = an->data.data() + i * k;
                         const double* grow = self->grad.data() + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const double av = arow[p];
                           if (av == 0.0) continue;
                           double* brow = bn->grad.data() + p * n;
                           for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                         }
                       }
                     }
                   };
                 });
}

Tensor transpose(const Tensor& a) {
  auto* an = req(a, "transpose");
  require_2d(an, "transpose");
  const std::size_t m = an->shape[0], n = an->shape[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = an->data[i * n + j];
  return make_op("transpose", {a.node_ptr()}, std::move(out), {n, m},
                 [an, m, n](TensorNode* self) {
                   return [self, an, m, n]() {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         accum(an, i * n + j, self->grad[j * m + i]);
                   };
                 });
}

Tensor softmax_rows(const Tensor& a) {
  auto* an = req(a, "softmax_rows");
  require_2d(an, "softmax_rows");
  const std::size_t m = an->shape[0], n = an->shape[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = an->data.data() + i * n;
    double* y = out.data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
  }
  const std::vector<double> probs = out;
  return make_op("softmax_rows", {a.node_ptr()}, std::move(out), an->shape,
                 [an, probs, m, n](TensorNode* self) {
                   return [self, an, probs, m, n]() {
                     for (std::size_t i = 0; i < m; ++i) {
                       const double* p = probs.data() + i * n;
                       const double* g = self->grad.data() + i * n;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) dot += p[j] * g[j];
                       for (std::size_t j = 0; j < n; ++j)
                         accum(an, i * n + j, p[j] * (g[j] - dot));
                     }
                   };
                 });
}

Tensor sum_all(const Tensor& a) {
  auto* an = req(a, "sum_all");
  double s = 0.0;
  for (double v : an->data) s += v;
  return make_op("sum_all", {a.node_ptr()}, {s}, {1},
                 [an](TensorNode* self) {
                   return [self, an]() {
                     for (std::size_t i = 0; i < an->data.size(); ++i)
                       accum(an, i, self->grad[0]);
                   };
                 });
}

Tensor mean_all(const Tensor& a) {
  auto* an = req(a, "mean_all");
  double s = 0.0;
  for (double v : an->data) s += v;
  const double inv = 1.0 / static_cast<double>(an->data.size());
  return make_op("mean_all", {a.node_ptr()}, {s * inv}, {1},
                 [an, inv](TensorNode* self) {
                   return [self, an, inv]() {
                     for (std::size_t i = 0; i < an->data.size(); ++i)
                       accum(an, i, inv * self->grad[0]);
                   };
                 });
}

// ---- normalization and norms --------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  auto* xn = req(x, "layer_norm");
  auto* gn = req(gain, "layer_norm");
  auto* bn = req(bias, "layer_norm");
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  std::size_t m, d;
  if (xn->shape.size() == 1) {
    m = 1;
    d = xn->shape[0];
  } else if (xn->shape.size() == 2) {
    m = xn->shape[0];
    d = xn->shape[1];
  } else {
    throw DimensionError("layer_norm expects 1-D or 2-D input, got " + shape_str(xn->shape));
  }
  if (gn->shape != std::vector<std::size_t>{d} || bn->shape != std::vector<std::size_t>{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gn->shape) + " and " + shape_str(bn->shape));
  }
  std::vector<double> out(m * d);
  std::vector<double> xhat(m * d);
  std::vector<double> inv_std(m);
  const double invd = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xn->data.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu *= invd;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mu;
      var += c * c;
    }
    var *= invd;  // population variance
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xi[j] - mu) * inv;
      xhat[i * d + j] = h;
      out[i * d + j] = gn->data[j] * h + bn->data[j];
    }
  }
  return make_op(
      "layer_norm", {x.node_ptr(), gain.node_ptr(), bias.node_ptr()}, std::move(out), xn->shape,
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), m, d,
       invd](TensorNode* self) {
        return [self, xn, gn, bn, xhat, inv_std, m, d, invd]() {
          for (std::size_t i = 0; i < m; ++i) {
            const double* dy = self->grad.data() + i * d;
            const double* xh = xhat.data() + i * d;
            if (bn->requires_grad)
              for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
            if (gn->requires_grad)
              for (std::size_t j = 0; j < d; ++j) gn->grad[j] += dy[j] * xh[j];
            if (xn->requires_grad) {
              double mean_g = 0.0, mean_gx = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                const double g = gn->data[j] * dy[j];
                mean_g += g;
                mean_gx += g * xh[j];
              }
              mean_g *= invd;
              mean_gx *= invd;
              for (std::size_t j = 0; j < d; ++j) {
                const double g = gn->data[j] * dy[j];
                xn->grad[i * d + j] += inv_std[i] * (g - mean_g - xh[j] * mean_gx);
              }
            }
          }
        };
      });
}

Tensor l2_norm(const Tensor& x) {
  auto* xn = req(x, "l2_norm");
  double ss = 0.0;
  for (double v : xn->data) ss += v * v;
  const double norm = std::sqrt(ss);
  return make_op("l2_norm", {x.node_ptr()}, {norm}, {1},
                 [xn, norm](TensorNode* self) {
                   return [self, xn, norm]() {
                     if (norm == 0.0) return;  // convention: zero gradient at 0
                     const double g = self->grad[0] / norm;
                     for (std::size_t i = 0; i < xn->data.size(); ++i)
                       accum(xn, i, xn->data[i] * g);
                   };
                 });
}

Tensor row_l2_norms(const Tensor& x) {
  auto* xn = req(x, "row_l2_norms");
  require_2d(xn, "row_l2_norms");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    const double* xi = xn->data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) ss += xi[j] * xi[j];
    out[i] = std::sqrt(ss);
  }
  const std::vector<double> norms = out;
  return make_op("row_l2_norms", {x.node_ptr()}, std::move(out), {m},
                 [xn, norms, m, n](TensorNode* self) {
                   return [self, xn, norms, m, n]() {
                     for (std::size_t i = 0; i < m; ++i) {
                       if (norms[i] == 0.0) continue;
                       const double g = self->grad[i] / norms[i];
                       for (std::size_t j = 0; j < n; ++j)
                         accum(xn, i * n + j, xn->data[i * n + j] * g);
                     }
                   };
                 });
}

// ---- broadcast / structural ops -----------------------------------------------

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  auto* xn = req(x, "reshape");
  if (shape_numel(shape) != xn->data.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(xn->shape) + " as " +
                         shape_str(shape));
  }
  return make_op("reshape", {x.node_ptr()}, xn->data, std::move(shape),
                 [xn](TensorNode* self) {
                   return [self, xn]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i)
                       accum(xn, i, self->grad[i]);
                   };
                 });
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& row) {
  auto* xn = req(x, "add_row_broadcast");
  auto* rn = req(row, "add_row_broadcast");
  require_2d(xn, "add_row_broadcast");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  if (rn->shape != std::vector<std::size_t>{n}) {
    throw DimensionError("add_row_broadcast: row must be [" + std::to_string(n) + "], got " +
                         shape_str(rn->shape));
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xn->data[i * n + j] + rn->data[j];
  return make_op("add_row_broadcast", {x.node_ptr(), row.node_ptr()}, std::move(out), xn->shape,
                 [xn, rn, m, n](TensorNode* self) {
                   return [self, xn, rn, m, n]() {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         accum(xn, i * n + j, self->grad[i * n + j]);
                         accum(rn, j, self->grad[i * n + j]);
                       }
                   };
                 });
}

Tensor add_scalar_tensor(const Tensor& x, const Tensor& s) {
  auto* xn = req(x, "add_scalar_tensor");
  auto* sn = req(s, "add_scalar_tensor");
  if (sn->data.size() != 1) {
    throw DimensionError("add_scalar_tensor: s must have numel 1, got " + shape_str(sn->shape));
  }
  std::vector<double> out(xn->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn->data[i] + sn->data[0];
  return make_op("add_scalar_tensor", {x.node_ptr(), s.node_ptr()}, std::move(out), xn->shape,
                 [xn, sn](TensorNode* self) {
                   return [self, xn, sn]() {
                     double total = 0.0;
                     for (std::size_t i = 0; i < self->grad.size(); ++i) {
                       accum(xn, i, self->grad[i]);
                       total += self->grad[i];
                     }
                     accum(sn, 0, total);
                   };
                 });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  auto* xn = req(x, "scale_rows");
  auto* sn = req(s, "scale_rows");
  require_2d(xn, "scale_rows");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  if (sn->shape != std::vector<std::size_t>{m}) {
    throw DimensionError("scale_rows: s must be [" + std::to_string(m) + "], got " +
                         shape_str(sn->shape));
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xn->data[i * n + j] * sn->data[i];
  return make_op("scale_rows", {x.node_ptr(), s.node_ptr()}, std::move(out), xn->shape,
                 [xn, sn, m, n](TensorNode* self) {
                   return [self, xn, sn, m, n]() {
                     for (std::size_t i = 0; i < m; ++i) {
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         accum(xn, i * n + j, sn->data[i] * self->grad[i * n + j]);
                         dot += xn->data[i * n + j] * self->grad[i * n + j];
                       }
                       accum(sn, i, dot);
                     }
                   };
                 });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  auto* an = req(a, "concat_cols");
  auto* bn = req(b, "concat_cols");
  require_2d(an, "concat_cols");
  require_2d(bn, "concat_cols");
  const std::size_t m = an->shape[0];
  if (bn->shape[0] != m) {
    throw DimensionError("concat_cols: row counts disagree, " + shape_str(an->shape) + " vs " +
                         shape_str(bn->shape));
  }
  const std::size_t p = an->shape[1], q = bn->shape[1];
  std::vector<double> out(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(an->data.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(bn->data.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return make_op("concat_cols", {a.node_ptr(), b.node_ptr()}, std::move(out), {m, p + q},
                 [an, bn, m, p, q](TensorNode* self) {
                   return [self, an, bn, m, p, q]() {
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t j = 0; j < p; ++j)
                         accum(an, i * p + j, self->grad[i * (p + q) + j]);
                       for (std::size_t j = 0; j < q; ++j)
                         accum(bn, i * q + j, self->grad[i * (p + q) + p + j]);
                     }
                   };
                 });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  auto* an = req(a, "concat_rows");
  auto* bn = req(b, "concat_rows");
  require_2d(an, "concat_rows");
  require_2d(bn, "concat_rows");
  if (an->shape[1] != bn->shape[1]) {
    throw DimensionError("concat_rows: column counts disagree, " + shape_str(an->shape) +
                         " vs " + shape_str(bn->shape));
  }
  const std::size_t ma = an->shape[0], mb = bn->shape[0], n = an->shape[1];
  std::vector<double> out((ma + mb) * n);
  std::copy_n(an->data.data(), ma * n, out.data());
  std::copy_n(bn->data.data(), mb * n, out.data() + ma * n);
  return make_op("concat_rows", {a.node_ptr(), b.node_ptr()}, std::move(out), {ma + mb, n},
                 [an, bn, ma, mb, n](TensorNode* self) {
                   return [self, an, bn, ma, mb, n]() {
                     for (std::size_t i = 0; i < ma * n; ++i) accum(an, i, self->grad[i]);
                     for (std::size_t i = 0; i < mb * n; ++i)
                       accum(bn, i, self->grad[ma * n + i]);
                   };
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  auto* xn = req(x, "slice_cols");
  require_2d(xn, "slice_cols");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  if (c0 >= c1 || c1 > n) {
    throw DimensionError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") for shape " + shape_str(xn->shape));
  }
  const std::size_t w = c1 - c0;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xn->data.data() + i * n + c0, w, out.data() + i * w);
  return make_op("slice_cols", {x.node_ptr()}, std::move(out), {m, w},
                 [xn, m, n, c0, w](TensorNode* self) {
                   return [self, xn, m, n, c0, w]() {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < w; ++j)
                         accum(xn, i * n + c0 + j, self->grad[i * w + j]);
                   };
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  auto* xn = req(x, "slice_rows");
  require_2d(xn, "slice_rows");
  const std::size_t m = xn->shape[0], n = xn->shape[1];
  if (r0 >= r1 || r1 > m) {
    throw DimensionError("slice_rows: invalid range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") for shape " + shape_str(xn->shape));
  }
  const std::size_t h = r1 - r0;
  std::vector<double> out(h * n);
  std::copy_n(xn->data.data() + r0 * n, h * n, out.data());
  return make_op("slice_rows", {x.node_ptr()}, std::move(out), {h, n},
                 [xn, n, r0, h](TensorNode* self) {
                   return [self, xn, n, r0, h]() {
                     for (std::size_t i = 0; i < h * n; ++i)
                       accum(xn, r0 * n + i, self->grad[i]);
                   };
                 });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("stack_scalars: empty input");
  std::vector<double> out(xs.size());
  std::vector<std::shared_ptr<TensorNode>> inputs;
  inputs.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto* n = req(xs[i], "stack_scalars");
    if (n->data.size() != 1) {
      throw DimensionError("stack_scalars: element " + std::to_string(i) + " has shape " +
                           shape_str(n->shape) + ", expected numel 1");
    }
    out[i] = n->data[0];
    inputs.push_back(xs[i].node_ptr());
  }
  std::vector<TensorNode*> raw;
  raw.reserve(inputs.size());
  for (auto& p : inputs) raw.push_back(p.get());
  return make_op("stack_scalars", std::move(inputs), std::move(out),
                 {xs.size()}, [raw = std::move(raw)](TensorNode* self) {
                   return [self, raw]() {
                     for (std::size_t i = 0; i < raw.size(); ++i)
                       accum(raw[i], 0, self->grad[i]);
                   };
                 });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  auto* tn = req(table, "gather_rows");
  require_2d(tn, "gather_rows");
  const std::size_t v = tn->shape[0], d = tn->shape[1];
  for (std::size_t id : ids) {
    if (id >= v) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " out of range for table " +
                           shape_str(tn->shape));
    }
  }
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tn->data.data() + ids[i] * d, d, out.data() + i * d);
  return make_op("gather_rows", {table.node_ptr()}, std::move(out), {ids.size(), d},
                 [tn, ids, d](TensorNode* self) {
                   return [self, tn, ids, d]() {
                     for (std::size_t i = 0; i < ids.size(); ++i)
                       for (std::size_t j = 0; j < d; ++j)
                         accum(tn, ids[i] * d + j, self->grad[i * d + j]);
                   };
                 });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return x;
  auto* xn = req(x, "dropout");
  const double inv_keep = 1.0 / (1.0 - p);
  std::vector<double> mask(xn->data.size());
  std::vector<double> out(xn->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : inv_keep;
    out[i] = xn->data[i] * mask[i];
  }
  return make_op("dropout", {x.node_ptr()}, std::move(out), xn->shape,
                 [xn, mask = std::move(mask)](TensorNode* self) {
                   return [self, xn, mask]() {
                     for (std::size_t i = 0; i < self->grad.size(); ++i)
                       accum(xn, i, mask[i] * self->grad[i]);
                   };
                 });
}

// ---- graph introspection ------------------------------------------------------

std::vector<GraphRecord> record_graph(const Tensor& root) {
  auto* rn = req(root, "record_graph");
  std::vector<GraphRecord> records;
  for (TensorNode* n : toposort(rn)) {
    GraphRecord r;
    r.output_id = n->id;
    r.op = n->op;
    for (const auto& in : n->inputs) r.input_ids.push_back(in->id);
    records.push_back(std::move(r));
  }
  return records;
}

// ---- finite differences ---------------------------------------------------------

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double h) {
  if (h <= 0.0) throw ContractError("finite_diff_grad: h must be positive");
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    const double fp = f(theta);
    theta[i] = orig - h;
    const double fm = f(theta);
    theta[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b, double floor) {
  return std::fabs(a - b) / std::max({floor, std::fabs(a), std::fabs(b)});
}

}  // namespace mag
