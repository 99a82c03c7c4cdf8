#include "geodistill/numerics/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "geodistill/error.hpp"

namespace geodistill::nx {

namespace {

#if defined(__GLIBC__)
// Activation buffers are a few hundred KB and are freed and reallocated on
// every step. Above the default mmap threshold each one costs fresh
// zero-filled pages; keeping them on the heap lets them be reused.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

}  // namespace

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  return grad;
}

void detail::check_finite(const char* op, std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

Tensor::Tensor(Shape shape, double fill) {
  node_ = std::make_shared<detail::Node>();
  node_->values.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size())
    throw InvalidArgument("tensor: shape " + shape_str(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->ensure_grad();
  return t;
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw InvalidArgument("tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) throw InvalidArgument("tensor: dim index out of range");
  return s[i];
}

std::size_t Tensor::numel() const { return node_ ? node_->values.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!node_) return {};
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw InvalidArgument("tensor: item() on " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && !node_->backward_fn; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->values.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.assign(node_->values.size(), 0.0);
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw InvalidArgument("tensor: undefined");
  if (node_->backward_fn) throw InvalidArgument("tensor: cannot mutate an op output");
  return node_->values;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_ || !node_->requires_grad) throw InvalidArgument("tensor: no gradient");
  return node_->ensure_grad();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->values); }

Tensor Tensor::clone() const {
  Tensor t(shape(), node_->values);
  if (node_->requires_grad) {
    t.node_->requires_grad = true;
    t.node_->grad = node_->grad;
    t.node_->ensure_grad();
  }
  return t;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor detail::make_result(const char* op, Shape shape, std::vector<double> values,
                           std::vector<Tensor> parents, std::function<void(Node&)> backward_fn) {
  check_finite(op, values);
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->values = std::move(values);
  if (t_grad_enabled) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const Tensor& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor::from_node(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw InvalidArgument("backward: loss must be a single-element tensor");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->values.size(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward_fn) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
}

}  // namespace geodistill::nx
