#include "lesion/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "lesion/error.hpp"
#include "lesion/rng.hpp"

namespace lesion {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool g_grad_enabled = true;
thread_local std::string g_fault_op;

std::uint64_t next_seq() { return g_next_seq.fetch_add(1, std::memory_order_relaxed); }

void check_shape(const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::ShapeMismatch, "tensor rank must be >= 1");
  for (std::size_t d : shape) {
    if (d == 0) fail(ErrorKind::ShapeMismatch, "zero-sized dimension in " + to_string(shape));
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

double* Node::input_grad(std::size_t i) {
  Node& in = *inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

}  // namespace detail

Tensor::Tensor(Shape shape, double fill) {
  check_shape(shape);
  auto node = std::make_shared<detail::Node>();
  node->data.assign(numel(shape), fill);
  node->shape = std::move(shape);
  node->seq = next_seq();
  node_ = std::move(node);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (numel(shape) != data.size()) {
    fail(ErrorKind::ShapeMismatch, "shape " + to_string(shape) + " does not hold " + std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = next_seq();
  node_ = std::move(node);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.node_->data) v = rng.uniform(lo, hi);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) fail(ErrorKind::InvalidConfig, "mutable_data() on a non-leaf tensor");
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) fail(ErrorKind::NotScalar, "item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

std::vector<double> Tensor::to_vector() const { return node_->data; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) fail(ErrorKind::InvalidConfig, "requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) fail(ErrorKind::InvalidConfig, "tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = requires_grad();
  return t;
}

const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::from_op(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                       detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  out.node_->op = op;
  if (!g_grad_enabled) return out;
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  out.node_->inputs.reserve(inputs.size());
  for (Tensor& t : inputs) out.node_->inputs.push_back(std::move(t.node_));
  return out;
}

void Tensor::backward() const {
  if (size() != 1) fail(ErrorKind::NotScalar, "backward() needs a scalar loss, got " + to_string(shape()));
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  // Interior gradients are per-pass scratch; only leaves accumulate.
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;

  for (detail::Node* n : order) {
    if (n->is_leaf()) continue;
    n->backward(*n);
    if (!g_fault_op.empty() && g_fault_op == n->op) n->backward(*n);
  }
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace testing {

ScopedBackwardFault::ScopedBackwardFault(std::string op) : previous_(std::move(g_fault_op)) { g_fault_op = std::move(op); }
ScopedBackwardFault::~ScopedBackwardFault() { g_fault_op = std::move(previous_); }

}  // namespace testing

}  // namespace lesion
