#include "dehaze/autograd.hpp"

#include <unordered_set>

namespace dehaze {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined()) throw InvalidArgument("backward on undefined Var");
  if (root.value().size() != 1) {
    throw InvalidArgument("backward root must be a scalar, got " + root.shape().str());
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  // Owning references: releasing a node's closure may drop the last other
  // reference to its inputs.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (!node->backward) continue;  // leaf
    if (!node->grad.empty()) node->backward(node->grad);
    node->backward = nullptr;
    node->inputs.clear();
    node->grad = Tensor<T>();
  }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace dehaze
