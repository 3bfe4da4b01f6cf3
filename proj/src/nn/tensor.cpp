#include "bardip/nn/tensor.hpp"
#include "bardip/common.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <unordered_set>

namespace bardip::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

Buffer& Node::ensure_grad() {
  if (grad.size() != value.size()) {
    grad.assign(value.size(), 0.0);
  }
  return grad;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value.assign(numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, Buffer values, bool requires_grad) : node_(std::make_shared<Node>()) {
  if (values.size() != numel(shape)) {
    throw DimensionError(fmt::format("{} values for shape {}", values.size(), shape_string(shape)));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Buffer* input_grad(Node& out, std::size_t i) {
  Node* n = out.inputs.size() > i ? out.inputs[i].get() : nullptr;
  if (!n || !n->requires_grad) {
    return nullptr;
  }
  return &n->ensure_grad();
}

Tensor Tensor::make_result(Shape shape, Buffer values, const std::vector<Tensor>& inputs,
                           BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) {
    return out;
  }
  bool needs = false;
  for (const auto& in : inputs) {
    needs = needs || (in.defined() && in.node_->requires_grad);
  }
  if (needs) {
    out.node_->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.defined()) {
        out.node_->inputs.push_back(in.node_);
      }
    }
    out.node_->backward_fn = std::move(backward);
  }
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= node_->shape.size()) {
    throw DimensionError(fmt::format("axis {} out of range for shape {}", i, shape_string(node_->shape)));
  }
  return node_->shape[i];
}

std::size_t Tensor::size() const { return node_->value.size(); }
std::span<double> Tensor::values() { return node_->value; }
std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() needs a single-element tensor, got " + shape_string(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }
std::span<double> Tensor::grad() { return node_->ensure_grad(); }
std::span<const double> Tensor::grad() const { return node_->ensure_grad(); }
void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

void Tensor::backward() {
  if (size() != 1) {
    throw DimensionError("backward() needs a scalar, got " + shape_string(shape()));
  }
  if (!node_->requires_grad) {
    return;
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && !seen.contains(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

} // namespace bardip::nn
