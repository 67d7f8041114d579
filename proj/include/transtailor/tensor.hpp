#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "transtailor/error.hpp"

namespace transtailor {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the recorded computation graph. Leaves have no parents and
// no backward function.
struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first populated
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives the gradient flowing into this node and accumulates the
  // contributions of its parents.
  std::function<void(std::span<const float> grad_out)> backward_fn;

  std::vector<float>& ensure_grad();
};

}  // namespace detail

// Dense row-major float tensor with optional reverse-mode gradient.
//
// Tensor is a shared handle: copying it aliases the same storage, the same
// way the graph edges do. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  // Independent copy of data and requires_grad flag; no graph, no grad.
  Tensor clone() const;
  // Independent copy of data only; never requires grad.
  Tensor detach() const;

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls until zero_grad().
  void backward() const;

  const std::string& op() const;

  // Internal: used by ops to build graph nodes.
  static Tensor make_result(Shape shape, std::vector<float> data, std::string op,
                            std::vector<Tensor> inputs,
                            std::function<void(std::span<const float>)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& checked() const;
  std::shared_ptr<detail::Node> node_;
};

// True when newly created op results record a backward function.
bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace testing {
// Negative-control hook for the verification suite: while set, every
// backward pass through an op with this name sees its incoming gradient
// scaled by 1.5. Empty string disables.
void set_gradient_fault(std::string op_name);
const std::string& gradient_fault();
}  // namespace testing

}  // namespace transtailor
