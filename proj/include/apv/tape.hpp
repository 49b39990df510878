#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "apv/tensor.hpp"

namespace apv {

class Tape;

// Handle to a node on a tape. Plain index; the owning tape is always passed
// alongside, which keeps the type trivially copyable.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in topological order during the
// forward pass; backward() walks them in reverse. A node's backward closure
// reads the node's own gradient and accumulates into its parents'.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    std::vector<int> parents;
    BackFn backward;
    bool requires_grad = false;
  };

  Var leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var make(Tensor value, std::vector<int> parents, BackFn backward) {
    bool rg = false;
    for (int p : parents) rg = rg || nodes_[static_cast<std::size_t>(p)].requires_grad;
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg) {
      n.parents = std::move(parents);
      n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  // Gradient buffer, allocated (zeroed) on first access.
  Tensor& grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }
  Tensor& grad_buf(Var v) { return grad_buf(v.id); }

  // Gradient of a node after backward(); zeros if it was never reached.
  const Tensor& grad(Var v) {
    return grad_buf(v.id);
  }

  bool grad_touched(Var v) const { return !nodes_[static_cast<std::size_t>(v.id)].grad.empty(); }

  // Accumulate into a parent's gradient only if that parent participates in
  // differentiation; constants are skipped entirely.
  bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void backward(Var root) {
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (r.value.size() != 1) throw ShapeError("backward root must be scalar");
    if (!r.requires_grad) return;
    grad_buf(root.id).at(0) = real(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  // deque keeps value references stable while the tape grows
  std::deque<Node> nodes_;
};

}  // namespace apv
