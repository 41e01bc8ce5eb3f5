#include "vts/numerics/autograd.hpp"

#include <unordered_set>

#include "vts/error.hpp"

namespace vts {

namespace {
thread_local bool g_grad_enabled = true;
}

Array& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Array(value.shape());
  return grad;
}

double Var::item() const {
  if (node_->value.size() != 1) {
    throw DimensionError("item() on non-scalar of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

Var constant(Array value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(ParamTensor& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  if (g_grad_enabled) {
    n->requires_grad = true;
    n->param = &p;
  }
  return Var(std::move(n));
}

Var make_result(Array value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (!root.defined()) throw Error("autograd", "backward on undefined variable");
  if (root.size() != 1) throw DimensionError("backward root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->grad.size() == 0) continue;
    if (node->backward_fn) node->backward_fn(*node);
    if (node->param) {
      auto& dst = node->param->grad;
      if (!dst.same_shape(node->grad)) dst = Array(node->param->value.shape());
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node->grad[i];
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

}  // namespace vts
