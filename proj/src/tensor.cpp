#include "cocoon/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace cocoon {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_finite(const Node& node) {
  for (double v : node.values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") +
                         node.op + "'");
    }
  }
}

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->tracked = requires_grad;
  check_finite(*node);
  return node;
}

// Builds an op node; records parents and the backward closure only when some
// input is tracked, so inference on detached values carries no graph.
NodePtr make_op(const char* op, Shape shape, std::vector<double> values,
                std::vector<NodePtr> parents,
                std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->values = std::move(values);
  check_finite(*node);
  bool tracked = false;
  for (const auto& p : parents) tracked = tracked || p->tracked;
  if (tracked) {
    node->tracked = true;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return node;
}

const Node& req(const Tensor& t, const char* op) {
  if (!t.defined()) {
    throw ContractError(std::string(op) + ": undefined tensor argument");
  }
  return *t.node();
}

bool is_matrix(const Node& n) { return n.shape.size() == 2; }
bool is_vector(const Node& n) { return n.shape.size() == 1; }

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_size(shape), 0.0);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_size(shape), value);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) {
  return Tensor(make_leaf(Shape{}, {value}, false));
}

const Shape& Tensor::shape() const { return req(*this, "shape").shape; }
std::size_t Tensor::size() const { return req(*this, "size").values.size(); }
bool Tensor::requires_grad() const {
  return req(*this, "requires_grad").requires_grad;
}
bool Tensor::tracked() const { return req(*this, "tracked").tracked; }

double Tensor::value() const {
  const Node& n = req(*this, "value");
  if (n.values.size() != 1) {
    throw ContractError("value(): tensor is not scalar, shape " +
                        shape_str(n.shape));
  }
  return n.values[0];
}

const std::vector<double>& Tensor::values() const {
  return req(*this, "values").values;
}

std::vector<double>& Tensor::values_mut() {
  Node& n = const_cast<Node&>(req(*this, "values_mut"));
  return n.values;
}

std::vector<double> Tensor::grad() const {
  const Node& n = req(*this, "grad");
  if (n.grad.empty()) return std::vector<double>(n.values.size(), 0.0);
  return n.grad;
}

Tensor Tensor::detach() const {
  const Node& n = req(*this, "detach");
  return Tensor(make_leaf(n.shape, n.values, false));
}

// --- matmul / transpose / reshape -------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  const Node& a = req(ta, "matmul");
  const Node& b = req(tb, "matmul");
  if (!is_matrix(a) || !is_matrix(b) || a.shape[1] != b.shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) +
                         " x " + shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.values[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &b.values[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return Tensor(make_op(
      "matmul", {m, n}, std::move(out), {ta.node(), tb.node()},
      [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.tracked) {
          // dA = dC · Bᵀ
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = &self.grad[i * n];
              const double* brow = &pb.values[p * n];
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              pa.grad[i * k + p] += acc;
            }
          }
        }
        if (pb.tracked) {
          // dB = Aᵀ · dC
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = &self.grad[i * n];
            for (std::size_t p = 0; p < k; ++p) {
              const double av = pa.values[i * k + p];
              if (av == 0.0) continue;
              double* brow = &pb.grad[p * n];
              for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
          }
        }
      }));
}

Tensor transpose(const Tensor& ta) {
  const Node& a = req(ta, "transpose");
  if (!is_matrix(a)) {
    throw DimensionError("transpose: expected matrix, got " +
                         shape_str(a.shape));
  }
  const std::size_t m = a.shape[0], n = a.shape[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values[i * n + j];
  }
  return Tensor(make_op("transpose", {n, m}, std::move(out), {ta.node()},
                        [m, n](Node& self) {
                          Node& p = *self.parents[0];
                          if (!p.tracked) return;
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                              p.grad[i * n + j] += self.grad[j * m + i];
                            }
                          }
                        }));
}

Tensor reshape(const Tensor& ta, Shape shape) {
  const Node& a = req(ta, "reshape");
  if (shape_size(shape) != a.values.size()) {
    throw DimensionError("reshape: element count mismatch " +
                         shape_str(a.shape) + " -> " + shape_str(shape));
  }
  return Tensor(make_op("reshape", std::move(shape),
                        std::vector<double>(a.values), {ta.node()},
                        [](Node& self) {
                          Node& p = *self.parents[0];
                          if (!p.tracked) return;
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            p.grad[i] += self.grad[i];
                          }
                        }));
}

// --- Elementwise ------------------------------------------------------------

namespace {

enum class BroadcastKind { Same, RowVector };

BroadcastKind broadcast_kind(const Node& a, const Node& b, const char* op) {
  if (a.shape == b.shape) return BroadcastKind::Same;
  if (is_matrix(a) && is_vector(b) && a.shape[1] == b.shape[0]) {
    return BroadcastKind::RowVector;
  }
  throw DimensionError(std::string(op) + ": shapes not broadcast-compatible " +
                       shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

Tensor add(const Tensor& ta, const Tensor& tb) {
  const Node& a = req(ta, "add");
  const Node& b = req(tb, "add");
  const BroadcastKind kind = broadcast_kind(a, b, "add");
  std::vector<double> out(a.values.size());
  if (kind == BroadcastKind::Same) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = a.values[i] + b.values[i];
    }
  } else {
    const std::size_t n = b.values.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = a.values[i] + b.values[i % n];
    }
  }
  return Tensor(make_op(
      "add", a.shape, std::move(out), {ta.node(), tb.node()},
      [kind](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.tracked) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i];
          }
        }
        if (pb.tracked) {
          if (kind == BroadcastKind::Same) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
              pb.grad[i] += self.grad[i];
            }
          } else {
            const std::size_t n = pb.grad.size();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
              pb.grad[i % n] += self.grad[i];
            }
          }
        }
      }));
}

Tensor mul(const Tensor& ta, const Tensor& tb) {
  const Node& a = req(ta, "mul");
  const Node& b = req(tb, "mul");
  const BroadcastKind kind = broadcast_kind(a, b, "mul");
  std::vector<double> out(a.values.size());
  const std::size_t n = b.values.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.values[i] *
             (kind == BroadcastKind::Same ? b.values[i] : b.values[i % n]);
  }
  return Tensor(make_op(
      "mul", a.shape, std::move(out), {ta.node(), tb.node()},
      [kind](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t n = pb.values.size();
        if (pa.tracked) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double bv = kind == BroadcastKind::Same ? pb.values[i]
                                                          : pb.values[i % n];
            pa.grad[i] += self.grad[i] * bv;
          }
        }
        if (pb.tracked) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const std::size_t bi = kind == BroadcastKind::Same ? i : i % n;
            pb.grad[bi] += self.grad[i] * pa.values[i];
          }
        }
      }));
}

namespace {

Tensor unary_op(const Tensor& ta, const char* op,
                const std::function<double(double)>& fwd,
                const std::function<double(double in, double out)>& dfn) {
  const Node& a = req(ta, op);
  std::vector<double> out(a.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values[i]);
  return Tensor(make_op(op, a.shape, std::move(out), {ta.node()},
                        [dfn](Node& self) {
                          Node& p = *self.parents[0];
                          if (!p.tracked) return;
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            p.grad[i] += self.grad[i] *
                                         dfn(p.values[i], self.values[i]);
                          }
                        }));
}

}  // namespace

Tensor relu(const Tensor& t) {
  return unary_op(
      t, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& t) {
  return unary_op(
      t, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& t) {
  return unary_op(
      t, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor neg(const Tensor& t) {
  return unary_op(
      t, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor sigmoid(const Tensor& t) {
  return unary_op(
      t, "sigmoid",
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor affine(const Tensor& t, double mul, double shift) {
  return unary_op(
      t, "affine", [mul, shift](double x) { return mul * x + shift; },
      [mul](double, double) { return mul; });
}

Tensor clamp_probability(const Tensor& t) {
  constexpr double lo = kProbabilityFloor;
  constexpr double hi = 1.0 - kProbabilityFloor;
  return unary_op(
      t, "clamp_probability",
      [](double x) { return std::min(hi, std::max(lo, x)); },
      [](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// --- Reductions --------------------------------------------------------------

Tensor sum(const Tensor& ta) {
  const Node& a = req(ta, "sum");
  double acc = 0.0;
  for (double v : a.values) acc += v;
  return Tensor(make_op("sum", Shape{}, {acc}, {ta.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.tracked) return;
    const double g = self.grad[0];
    for (double& gv : p.grad) gv += g;
  }));
}

Tensor mean_rows(const Tensor& ta) {
  const Node& a = req(ta, "mean_rows");
  if (!is_matrix(a)) {
    throw DimensionError("mean_rows: expected matrix, got " +
                         shape_str(a.shape));
  }
  const std::size_t b = a.shape[0], n = a.shape[1];
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += a.values[i * n + j];
  }
  for (double& v : out) v /= static_cast<double>(b);
  return Tensor(make_op("mean_rows", {n}, std::move(out), {ta.node()},
                        [b, n](Node& self) {
                          Node& p = *self.parents[0];
                          if (!p.tracked) return;
                          const double inv = 1.0 / static_cast<double>(b);
                          for (std::size_t i = 0; i < b; ++i) {
                            for (std::size_t j = 0; j < n; ++j) {
                              p.grad[i * n + j] += self.grad[j] * inv;
                            }
                          }
                        }));
}

// --- softmax / normalize ------------------------------------------------------

Tensor softmax_scaled(const Tensor& ta, double scale) {
  const Node& a = req(ta, "softmax_scaled");
  if (scale <= 0.0) throw ContractError("softmax_scaled: scale must be > 0");
  std::size_t rows, cols;
  if (is_vector(a)) {
    rows = 1;
    cols = a.shape[0];
  } else if (is_matrix(a)) {
    rows = a.shape[0];
    cols = a.shape[1];
  } else {
    throw DimensionError("softmax_scaled: expected vector or matrix, got " +
                         shape_str(a.shape));
  }
  if (cols == 0) throw ContractError("softmax_scaled: empty distribution");
  std::vector<double> out(a.values.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &a.values[r * cols];
    double* o = &out[r * cols];
    double mx = in[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(scale * (in[j] - mx));
      denom += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= denom;
  }
  return Tensor(make_op(
      "softmax_scaled", a.shape, std::move(out), {ta.node()},
      [rows, cols, scale](Node& self) {
        Node& p = *self.parents[0];
        if (!p.tracked) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &self.values[r * cols];
          const double* g = &self.grad[r * cols];
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < cols; ++j) {
            p.grad[r * cols + j] += scale * y[j] * (g[j] - dot);
          }
        }
      }));
}

Tensor l2_normalize(const Tensor& ta) {
  const Node& a = req(ta, "l2_normalize");
  std::size_t rows, cols;
  if (is_vector(a)) {
    rows = 1;
    cols = a.shape[0];
  } else if (is_matrix(a)) {
    rows = a.shape[0];
    cols = a.shape[1];
  } else {
    throw DimensionError("l2_normalize: expected vector or matrix, got " +
                         shape_str(a.shape));
  }
  std::vector<double> out(a.values.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &a.values[r * cols];
    double sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sq += in[j] * in[j];
    const double norm = std::sqrt(sq);
    if (norm < kNormFloor) {
      throw DegenerateInputError(
          "l2_normalize: norm below floor at row " + std::to_string(r));
    }
    norms[r] = norm;
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = in[j] / norm;
  }
  return Tensor(make_op(
      "l2_normalize", a.shape, std::move(out), {ta.node()},
      [rows, cols, norms](Node& self) {
        Node& p = *self.parents[0];
        if (!p.tracked) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &self.values[r * cols];
          const double* g = &self.grad[r * cols];
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < cols; ++j) {
            p.grad[r * cols + j] += (g[j] - y[j] * dot) / norms[r];
          }
        }
      }));
}

Tensor pair_cross_concat(const Tensor& te1, const Tensor& te2) {
  const Node& a = req(te1, "pair_cross_concat");
  const Node& b = req(te2, "pair_cross_concat");
  if (!is_matrix(a) || !is_matrix(b) || a.shape[0] != b.shape[0]) {
    throw DimensionError("pair_cross_concat: expected [b,d1] and [b,d2], got " +
                         shape_str(a.shape) + " and " + shape_str(b.shape));
  }
  const std::size_t batch = a.shape[0], d1 = a.shape[1], d2 = b.shape[1];
  const std::size_t width = d1 + d2;
  std::vector<double> out(batch * batch * width);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < batch; ++j) {
      double* row = &out[(i * batch + j) * width];
      std::copy_n(&a.values[i * d1], d1, row);
      std::copy_n(&b.values[j * d2], d2, row + d1);
    }
  }
  return Tensor(make_op(
      "pair_cross_concat", {batch * batch, width}, std::move(out),
      {te1.node(), te2.node()}, [batch, d1, d2, width](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < batch; ++i) {
          for (std::size_t j = 0; j < batch; ++j) {
            const double* grow = &self.grad[(i * batch + j) * width];
            if (pa.tracked) {
              for (std::size_t c = 0; c < d1; ++c) {
                pa.grad[i * d1 + c] += grow[c];
              }
            }
            if (pb.tracked) {
              for (std::size_t c = 0; c < d2; ++c) {
                pb.grad[j * d2 + c] += grow[d1 + c];
              }
            }
          }
        }
      }));
}

// --- backward -----------------------------------------------------------------

void backward(const Tensor& loss) {
  const Node& root_check = req(loss, "backward");
  if (root_check.values.size() != 1) {
    throw ContractError("backward: loss must be scalar, shape " +
                        shape_str(root_check.shape));
  }
  NodePtr root = loss.node();

  // Iterative post-order DFS: children (parents in graph terms) first.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (root->tracked || root->requires_grad) {
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    node->grad.assign(node->values.size(), 0.0);
  }
  if (order.empty()) return;  // loss disconnected from any parameter
  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop) node->backprop(*node);
  }
}

// --- finite differences --------------------------------------------------------

double finite_diff_check(const std::function<Tensor()>& loss_fn,
                         std::span<Tensor> params, double step) {
  if (step <= 0.0) throw ContractError("finite_diff_check: step must be > 0");
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::vector<double>& vals = params[pi].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      const double up = loss_fn().value();
      vals[i] = saved - step;
      const double down = loss_fn().value();
      vals[i] = saved;
      const double central = (up - down) / (2.0 * step);
      const double a = analytic[pi][i];
      const double denom =
          std::max({std::abs(a), std::abs(central), 1e-8});
      worst = std::max(worst, std::abs(a - central) / denom);
    }
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         Tensor point, double step) {
  std::array<Tensor, 1> params{point};
  return finite_diff_check([&] { return f(params[0]); },
                           std::span<Tensor>(params), step);
}

}  // namespace cocoon
