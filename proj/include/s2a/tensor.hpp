#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "s2a/rng.hpp"

namespace s2a {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);

namespace detail {

/// One recorded value in the computation graph. Creation order is a valid
/// topological order, which is what backward() replays in reverse.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  std::uint64_t id = 0;

  void ensure_grad();
};

}  // namespace detail

/// Dense row-major tensor participating in reverse-mode differentiation.
/// Copies share the underlying node (value semantics on the handle).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  int dim(int i) const { return shape()[i]; }
  bool requires_grad() const;

  const std::vector<double>& values() const;
  std::vector<double>& values();  // direct mutation; only sane on leaves
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;  // scalar tensors only

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// The reverse pass replay order: nodes reachable from a root, topologically
/// sorted by creation id.
struct Tape {
  std::vector<std::shared_ptr<detail::Node>> ops;
};

Tape trace(const Tensor& root);

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf. Loss must be
/// scalar. Gradients add across calls; zero explicitly between steps.
void backward(const Tensor& loss);

// ---- elementwise / broadcasting binary ops (numpy-style, right-aligned) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

// ---- unary ----
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);
Tensor max_axis(const Tensor& x, int axis);

// ---- shape ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose2d(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int>& sizes);

// ---- linear algebra / conv ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride,
                        int padding = 0);
Tensor upsample_nearest2x(const Tensor& x);

/// Stable elementwise binary cross-entropy from logits against constant (or
/// differentiable) targets. Same shape required.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace s2a
