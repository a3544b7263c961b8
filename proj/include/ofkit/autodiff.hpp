#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ofkit/tensor.hpp"

namespace ofkit {

struct Node;

// Handle to a node of the recorded computation. Copies share the node, so a
// Var behaves like a reference-counted tensor with an optional grad buffer.
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor value, bool requires_grad = false);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }
  static Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const;
  bool requires_grad() const;
  const Tensor& grad() const;
  Tensor& grad();
  void zero_grad();

  // Same value, no history: gradients never flow through the result.
  Var detach() const;

  std::shared_ptr<Node> node() const { return n_; }
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<Node> n_;
};

struct Node {
  Tensor value;
  Tensor grad_buf;  // allocated on first accumulation
  bool requires_grad = false;
  bool grad_alloc = false;
  uint64_t seq = 0;  // creation order; replayed in reverse by backpropagate
  const char* op = "leaf";
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;  // pulls grad_buf, pushes into inputs

  Tensor& ensure_grad() {
    if (!grad_alloc) {
      grad_buf = Tensor::zeros(value.shape());
      grad_alloc = true;
    }
    return grad_buf;
  }
};

// Thread-local switch: when disabled, ops compute values but record nothing
// (used for inference and for plain numeric evaluation).
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

uint64_t next_node_seq();

// Core factory used by every op: computes requires_grad from the inputs,
// checks the output for non-finite values, and attaches the backward closure
// only when recording is on.
Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward);

// Accumulate `delta` into v's grad buffer (no-op when !requires_grad).
void accumulate_grad(const Var& v, const Tensor& delta);

// Reverse pass from a scalar. Visits each recorded node exactly once in
// reverse creation order and leaves gradients on every requires_grad leaf.
void backpropagate(const Var& loss);

}  // namespace ofkit
