#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mistseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the computation graph. Inputs always precede the node that
// consumes them, so a reverse topological walk visits every op exactly once.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional gradient buffer.
///
/// Tensors are cheap handles: copying one shares the underlying node. Values
/// produced by ops are immutable; only leaves (parameters) are updated in
/// place, and only by optimizers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable view for leaves. Throws if the tensor was produced by an op.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Recorded operations reachable from `root`, inputs before consumers.
std::vector<detail::Node*> topological_order(const Tensor& root);

/// Accumulates d(loss)/d(leaf) into every leaf that requires grad.
/// Throws std::invalid_argument unless `loss` is a finite scalar.
void backward(const Tensor& loss);

}  // namespace mistseg
