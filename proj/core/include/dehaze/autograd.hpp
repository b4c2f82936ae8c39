#pragma once

// Minimal reverse-mode automatic differentiation over rank-4 tensors.
//
// A Var is a handle to a graph node. Ops create result nodes that remember
// their inputs and a closure that pushes the output gradient back into them.
// Recording happens only while gradient mode is on and at least one input
// requires a gradient, so inference under NoGradGuard keeps no graph.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Tensor<T>&)> backward;

  /// Gradient buffer, allocated as zeros on first use.
  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size() || !(grad.shape() == value.shape())) {
      grad = Tensor<T>(value.shape());
    }
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  // Var has handle semantics: constness does not extend to the node.
  Tensor<T>& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  /// Empty tensor until a backward pass has reached this node.
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() const { return node_->grad_buffer(); }
  void zero_grad() const {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (per thread).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Wraps `value` in a result node. When recording, `backward` receives the
/// output gradient and must accumulate into the inputs that require grad.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(const Tensor<T>&)> backward) {
  bool record = grad_enabled();
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  record = record && any;
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (record) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) {
      if (v.defined()) node->inputs.push_back(v.node());
    }
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Copy of the value with no history.
template <typename T>
Var<T> detach(const Var<T>& v) {
  return Var<T>(v.value(), false);
}

/// Backpropagates from a scalar root. Interior nodes release their closures
/// and gradients afterwards; leaves keep accumulated gradients.
template <typename T>
void backward(const Var<T>& root);

extern template void backward<float>(const Var<float>&);
extern template void backward<double>(const Var<double>&);

}  // namespace dehaze
