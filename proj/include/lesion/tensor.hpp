#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lesion {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One recorded value. Leaves have no inputs and no backward rule. `seq` is a
// process-wide creation counter: inputs are always created before the ops that
// consume them, so descending `seq` is a valid reverse topological order.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty == absent
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad();
  // Gradient buffer of input i, or nullptr when that input does not track gradients.
  double* input_grad(std::size_t i);
};

}  // namespace detail

/// Dense row-major float64 tensor with optional reverse-mode gradient.
///
/// Tensor is a shared handle: copies alias the same storage, which is what lets
/// an optimizer update parameters in place between steps. Values produced by
/// ops are never mutated afterwards.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's storage (parameter updates, test fixtures).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode pass from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  /// Same values, fresh leaf with no history.
  Tensor detach() const;
  /// Deep copy of the values into a new leaf that keeps the requires_grad flag.
  Tensor clone() const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds a recorded op result. The backward rule is kept only when grad mode
  /// is on and some input tracks gradients.
  static Tensor from_op(Shape shape, std::vector<double> data, const char* op,
                        std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// Disables recording for its lifetime (inference, finite differences).
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

/// Test hook: while alive, the backward rule of every node whose op name
/// equals `op` is applied twice, corrupting its gradients. Used as a negative
/// control for the gradient checker.
class ScopedBackwardFault {
 public:
  explicit ScopedBackwardFault(std::string op);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  std::string previous_;
};

}  // namespace testing

}  // namespace lesion
