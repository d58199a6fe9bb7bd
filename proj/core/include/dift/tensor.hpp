#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dift/common.hpp"

namespace dift {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major tensor. Copying a Tensor copies the handle, not the
/// storage: autograd needs consumers of the same value to share one node so
/// their adjoints accumulate. Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data) {
    require(!shape.empty(), "Tensor: rank-0 shapes are not supported");
    for (std::size_t d : shape) require(d > 0, "Tensor: dimensions must be positive");
    require(shape_numel(shape) == data.size(),
            "Tensor: data length " + std::to_string(data.size()) +
                " does not match shape " + shape_str(shape));
    node_ = std::make_shared<detail::TensorNode<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    std::vector<T> data(shape_numel(shape), T(0));
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor full(Shape shape, T v) {
    std::vector<T> data(shape_numel(shape), v);
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }

  /// Rank-2 helpers.
  std::size_t rows() const { return node_->shape[rank() - 2]; }
  std::size_t cols() const { return node_->shape[rank() - 1]; }

  // A Tensor is a handle: const applies to the handle, not the node, the
  // same way a const shared_ptr still gives mutable access to its pointee.
  T* data() const { return node_->value.data(); }
  std::vector<T>& values() const { return node_->value; }

  T& at(std::size_t i) const { return node_->value[i]; }
  T& at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  T item() const {
    require(size() == 1, "Tensor::item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool f = true) {
    node_->requires_grad = f;
    return *this;
  }

  bool grad_allocated() const { return !node_->grad.empty(); }

  /// Gradient buffer, allocated (zero-filled) on first use.
  std::vector<T>& grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
  }

  void zero_grad() const { node_->grad.clear(); }

  /// Independent deep copy (fresh node, no grad, requires_grad cleared).
  Tensor clone() const {
    Tensor t(node_->shape, node_->value);
    return t;
  }

  /// Stable identity of the underlying node.
  const void* id() const { return node_.get(); }

  bool all_finite() const {
    for (const T& v : node_->value)
      if (!finite(v)) return false;
    return true;
  }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

/// Reverse-mode tape. Ops append one pull-back step per executed primitive;
/// backward() replays them in exact reverse execution order, accumulating
/// adjoints additively into every consumer's inputs.
template <typename T>
class Graph {
 public:
  void record(std::function<void()> pull) { steps_.push_back(std::move(pull)); }

  std::size_t size() const { return steps_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates adjoints to all recorded
  /// inputs with requires_grad set. The tape is consumed: a second call
  /// without re-recording is an error.
  void backward(Tensor<T> loss) {
    if (consumed_)
      throw ContractError("Graph::backward: tape already consumed; re-record the forward pass");
    require(loss.defined() && loss.size() == 1, "Graph::backward: loss must be a scalar tensor");
    loss.grad()[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  /// Drops all recorded steps; the graph can record a new forward pass.
  void reset() {
    steps_.clear();
    consumed_ = false;
  }

  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

}  // namespace dift
