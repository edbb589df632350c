#include "satmap/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace satmap {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t c, std::size_t y, std::size_t x) const {
  const auto& s = node_->shape;
  return node_->data[(c * s[1] + y) * s[2] + x];
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->data, requires_grad); }

void Tape::record(const char* op, std::shared_ptr<TensorNode> output, BackwardFn fn) {
  if (consumed_) throw std::logic_error(std::string("recording ") + op + " on a consumed tape");
  entries_.push_back(Entry{op, std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward called twice on the same tape");
  if (loss.numel() != 1 || !loss.shape().empty()) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any trainable tensor");
  consumed_ = true;
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // no downstream use
    it->backward(*it->output);
  }
  for (auto& e : entries_) {
    e.output->grad.clear();
    e.output->grad.shrink_to_fit();
  }
  entries_.clear();
  entries_.shrink_to_fit();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

namespace detail {

namespace {
std::shared_ptr<TensorNode> make_node(Shape shape, bool any_grad) {
  auto node = std::make_shared<TensorNode>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->leaf = false;
  node->requires_grad = any_grad && g_active_tape != nullptr;
  return node;
}
}  // namespace

std::shared_ptr<TensorNode> make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  return make_node(std::move(shape), any);
}

std::shared_ptr<TensorNode> make_output(Shape shape, std::span<const Tensor> inputs) {
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  return make_node(std::move(shape), any);
}

void check_finite(const TensorNode& node, const char* op) {
  for (std::size_t i = 0; i < node.data.size(); ++i) {
    if (!std::isfinite(node.data[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " +
                         std::to_string(i) + " of output " + shape_str(node.shape));
    }
  }
}

Tensor finish(const char* op, std::shared_ptr<TensorNode> out, Tape::BackwardFn fn) {
  check_finite(*out, op);
  if (out->requires_grad) g_active_tape->record(op, out, std::move(fn));
  return Tensor(std::move(out));
}

}  // namespace detail

}  // namespace satmap
