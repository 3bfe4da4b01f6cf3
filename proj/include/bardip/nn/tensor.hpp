#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bardip::nn {

using Shape = std::vector<std::size_t>;

/// Tensor storage. Fixed alignment keeps Eigen reductions, whose vector
/// peeling depends on the address, bitwise reproducible.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node& out)>;

/// Graph node: values, lazily allocated gradient, and the closure that pushes
/// `grad` back into `inputs`. Inputs are held by shared ownership so the
/// closure may keep raw pointers to them.
struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;

  Buffer& ensure_grad();
};

/// Handle to a row-major array of doubles that records the operations applied
/// to it. Copies share the underlying node.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, Buffer values, bool requires_grad = false);

  /// Result of an operation. Graph edges are recorded only when grad mode is
  /// on and some input requires a gradient.
  static Tensor make_result(Shape shape, Buffer values, const std::vector<Tensor>& inputs,
                            BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const;

  std::span<double> values();
  std::span<const double> values() const;
  double* data() { return values().data(); }
  const double* data() const { return values().data(); }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Allocates a zero gradient on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar; gradients accumulate into every
  /// reachable tensor that requires them.
  void backward();

  /// Same values, no history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Gradient buffer of input i of `out`, or nullptr when that input needs none.
/// For use inside BackwardFn closures.
Buffer* input_grad(Node& out, std::size_t i);

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

} // namespace bardip::nn
