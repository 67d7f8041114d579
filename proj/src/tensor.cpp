#include "transtailor/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace transtailor {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

thread_local bool g_grad_enabled = true;
std::string g_gradient_fault;

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

std::vector<float>& detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad) {
  check_shape(shape);
  node_ = std::make_shared<detail::Node>();
  node_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

detail::Node& Tensor::checked() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(checked().data.size()); }

std::span<float> Tensor::data() { return checked().data; }
std::span<const float> Tensor::data() const { return checked().data; }

float Tensor::item() const {
  const auto& n = checked();
  if (n.data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(n.shape));
  return n.data[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
void Tensor::set_requires_grad(bool flag) { checked().requires_grad = flag; }

bool Tensor::has_grad() const {
  const auto& n = checked();
  return !n.grad.empty() && n.grad.size() == n.data.size();
}

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no populated gradient");
  return node_->grad;
}

std::span<float> Tensor::mutable_grad() { return checked().ensure_grad(); }

void Tensor::zero_grad() {
  auto& n = checked();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  const auto& n = checked();
  return Tensor(n.shape, n.data, n.requires_grad);
}

Tensor Tensor::detach() const {
  const auto& n = checked();
  return Tensor(n.shape, n.data, false);
}

const std::string& Tensor::op() const { return checked().op; }

Tensor Tensor::make_result(Shape shape, std::vector<float> data, std::string op,
                           std::vector<Tensor> inputs,
                           std::function<void(std::span<const float>)> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  out.node_->op = std::move(op);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->backward_fn = std::move(backward);
  out.node_->parents.reserve(inputs.size());
  for (auto& in : inputs) out.node_->parents.push_back(in.node_);
  return out;
}

void Tensor::backward() const {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw ContractError("backward() requires a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  // Post-order DFS gives a topological order with parents before children.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-pass; leaves accumulate.
  for (auto* node : order) {
    if (node->backward_fn) node->grad.assign(node->data.size(), 0.0f);
  }
  root.ensure_grad()[0] += 1.0f;

  const std::string& fault = g_gradient_fault;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward_fn) continue;
    if (!fault.empty() && node->op == fault) {
      std::vector<float> scaled(node->grad);
      for (auto& g : scaled) g *= 1.5f;
      node->backward_fn(scaled);
    } else {
      node->backward_fn(node->grad);
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void testing::set_gradient_fault(std::string op_name) { g_gradient_fault = std::move(op_name); }
const std::string& testing::gradient_fault() { return g_gradient_fault; }

}  // namespace transtailor
