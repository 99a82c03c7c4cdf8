#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace geodistill::nx {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded value on the dynamic tape. Ops append nodes as they run;
// backward() walks them in reverse topological order.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized iff requires_grad once touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major float64 tensor with shared storage. Copies alias the same
// node; use clone() for a deep copy. Values of non-leaf tensors are immutable.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  // Leaf with requires_grad = true and a zeroed gradient.
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  double at(std::size_t i) const { return values()[i]; }
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Writable view of a leaf's values. Throws for tensors produced by ops.
  std::span<double> mutable_values();
  std::span<double> mutable_grad();

  // Same values, no tape connection, no gradient.
  Tensor detach() const;
  // Deep copy as a leaf preserving requires_grad.
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
void backward(const Tensor& loss);

bool grad_enabled();

// While alive, ops on this thread record no tape and produce constant tensors.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op output. Records parents and the backward closure only when
// gradients are enabled and some parent requires them. Throws NumericError
// if any value is non-finite.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn);

void check_finite(const char* op, std::span<const double> v);

}  // namespace detail

}  // namespace geodistill::nx
