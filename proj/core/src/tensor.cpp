#include "mistseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "mistseg/errors.hpp"

namespace mistseg {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->is_leaf()) throw std::logic_error("cannot mutate the output of an op");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() needs a single-element tensor, got shape " + shape_str(shape()));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  return Tensor(shape(), node_->data);
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::vector<detail::Node*> topological_order(const Tensor& root) {
  std::vector<detail::Node*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<detail::Node*> visited;
  // Iterative post-order DFS; recursion would overflow on long chains.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!std::isfinite(loss.item())) throw std::invalid_argument("backward() on a non-finite loss");
  if (!loss.requires_grad()) return;

  auto order = topological_order(loss);
  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->is_leaf()) node->backward(*node);
  }
}

}  // namespace mistseg
