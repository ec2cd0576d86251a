#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cocoon/common.hpp"

namespace cocoon {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized/zeroed by backward()
  bool requires_grad = false;
  bool tracked = false;  // requires_grad or downstream of a tensor that does
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // accumulates into parents' grad
};

}  // namespace detail

// Dense real-valued tensor participating in reverse-mode differentiation.
// Values are row-major; every forward op validates finiteness of its output.
// Tensors are immutable values once built apart from values_mut(), which the
// trainer uses between forward/backward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  bool requires_grad() const;
  bool tracked() const;

  double value() const;  // scalar tensors only
  const std::vector<double>& values() const;
  std::vector<double>& values_mut();  // trainer-side mutation between steps

  // Gradient from the most recent backward() pass that reached this tensor;
  // zeros if never reached.
  std::vector<double> grad() const;

  // Value copy detached from any graph.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- Core operations -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);   // [m,k]·[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                 // [m,n] -> [n,m]
Tensor reshape(const Tensor& a, Shape shape);      // same element count

// Elementwise; add/mul accept equal shapes or [m,n] (op) [n] row broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Elementwise a*mul + shift with scalar constants.
Tensor affine(const Tensor& a, double mul, double shift);

// Clamp into [1e-7, 1 - 1e-7]; gradient passes only strictly inside.
Tensor clamp_probability(const Tensor& a);
constexpr double kProbabilityFloor = 1e-7;

Tensor sum(const Tensor& a);        // -> scalar
Tensor mean_rows(const Tensor& a);  // [b,n] -> [n]

// softmax(scale * x) along the last dimension of a [n] or [b,n] tensor,
// stabilized by max subtraction; output rows sum to 1.
Tensor softmax_scaled(const Tensor& logits, double scale);

// Unit Euclidean norm; rows of a matrix are normalized independently.
// Norms below 1e-12 are a degenerate-input error.
Tensor l2_normalize(const Tensor& v);
constexpr double kNormFloor = 1e-12;

// All ordered cross-pair concatenations of two embedding batches:
// rows i*b+j of the result are [e1_i | e2_j], shape [b*b, d1+d2].
Tensor pair_cross_concat(const Tensor& e1, const Tensor& e2);

// --- Reverse-mode pass ------------------------------------------------------

// Populates grad for every tensor the scalar loss depends on. Each node is
// visited exactly once; fan-out gradients accumulate additively. Grads from
// earlier passes on reachable nodes are overwritten.
void backward(const Tensor& loss);

// --- Verification oracle ----------------------------------------------------

// Max over coordinates of |analytic - central difference| /
// max(|analytic|, |central|, 1e-8). `loss_fn` must rebuild its graph from the
// current parameter values on every call.
double finite_diff_check(const std::function<Tensor()>& loss_fn,
                         std::span<Tensor> params, double step);
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         Tensor point, double step);

}  // namespace cocoon
