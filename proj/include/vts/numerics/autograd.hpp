#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vts/numerics/array.hpp"

namespace vts {

/// One recorded operation in the reverse-mode tape. Nodes own their forward
/// value; `grad` is allocated on first use during a backward pass.
struct Node {
  Array value;
  Array grad;
  bool requires_grad = false;
  ParamTensor* param = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first access.
  Array& grad_buffer();
};

/// Handle to a node. Cheap to copy; the graph lives as long as any handle
/// to its root does.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Array& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Array value);
Var parameter(ParamTensor& p);

/// Build a result node. `fn` receives the result node and must push its
/// gradient into the parents' grad buffers. Parents and `fn` are dropped
/// when no parent requires a gradient or a NoGradGuard is active.
Var make_result(Array value, std::vector<Var> parents, std::function<void(Node&)> fn);

/// Reverse pass from a scalar root. Gradients accumulate additively into
/// every reachable ParamTensor::grad.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace vts
