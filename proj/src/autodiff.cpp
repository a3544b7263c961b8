#include "ofkit/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_set>

namespace ofkit {

namespace {
thread_local bool g_grad_enabled = true;
thread_local uint64_t g_seq = 0;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

uint64_t next_node_seq() { return ++g_seq; }

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && g_grad_enabled;
  n->seq = next_node_seq();
  return Var(std::move(n));
}

const Tensor& Var::value() const {
  if (!n_) throw std::runtime_error("Var: using an undefined variable");
  return n_->value;
}

bool Var::requires_grad() const { return n_ && n_->requires_grad; }

const Tensor& Var::grad() const {
  if (!requires_grad()) throw std::runtime_error("Var: grad() on a non-gradient variable");
  return n_->ensure_grad();
}

Tensor& Var::grad() {
  if (!requires_grad()) throw std::runtime_error("Var: grad() on a non-gradient variable");
  return n_->ensure_grad();
}

void Var::zero_grad() {
  if (n_ && n_->grad_alloc) std::fill(n_->grad_buf.data(), n_->grad_buf.data() + n_->grad_buf.numel(), 0.0);
}

Var Var::detach() const {
  if (!n_) return Var();
  return Var::constant(n_->value);
}

Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward) {
  if (!value.all_finite())
    throw std::runtime_error(std::string("numeric overflow: op '") + name +
                             "' produced a non-finite value");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = name;
  n->seq = next_node_seq();
  bool rg = false;
  if (g_grad_enabled)
    for (const Var& v : inputs)
      if (v.requires_grad()) rg = true;
  n->requires_grad = rg;
  if (rg) {
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

void accumulate_grad(const Var& v, const Tensor& delta) {
  if (!v.requires_grad()) return;
  Tensor& g = v.node()->ensure_grad();
  if (!g.same_shape(delta))
    throw std::runtime_error("accumulate_grad: shape mismatch " + g.shape_str() + " vs " +
                             delta.shape_str());
  const double* src = delta.data();
  double* dst = g.data();
  const int64_t n = g.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void backpropagate(const Var& loss) {
  if (!loss.defined()) throw std::runtime_error("backpropagate: undefined loss");
  if (!loss.value().is_scalar())
    throw std::runtime_error("backpropagate: loss must be scalar, got shape " +
                             loss.value().shape_str());
  if (!loss.requires_grad())
    throw std::runtime_error("backpropagate: loss is detached from every gradient leaf");

  // Collect reachable gradient nodes, then replay in reverse creation order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const Var& in : n->inputs) {
      Node* p = in.node().get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  loss.node()->ensure_grad()[0] = 1.0;
  for (Node* n : order)
    if (n->backward) n->backward(*n);
}

}  // namespace ofkit
