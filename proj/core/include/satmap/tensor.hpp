#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace satmap {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when an operation receives operands it cannot combine.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward result contains NaN or Inf. The message names the op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;

  void accumulate_grad(std::size_t i, double g) {
    ensure_grad();
    grad[i] += g;
  }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Shared handle to a dense row-major float64 array.
///
/// Copies are shallow. Values are treated as immutable once an op has consumed
/// them; parameters are the only tensors mutated in place (by the optimizer,
/// outside of any tape).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Fresh leaf holding a copy of the values, detached from any history.
  Tensor detach(bool requires_grad = false) const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of differentiable ops executed while it is active.
///
/// Entries are appended in execution order, so every entry's inputs were
/// produced by earlier entries or are leaves. One backward pass per tape.
class Tape {
 public:
  using BackwardFn = std::function<void(const TensorNode& out)>;

  struct Entry {
    const char* op;
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };

  void record(const char* op, std::shared_ptr<TensorNode> output, BackwardFn fn);

  /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
  /// additively; intermediate gradients and saved state are released.
  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes a tape the recording target for ops issued on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

namespace detail {

/// Allocates an op result; the node requires grad iff some input does and a
/// tape is recording.
std::shared_ptr<TensorNode> make_output(Shape shape, std::initializer_list<const Tensor*> inputs);
std::shared_ptr<TensorNode> make_output(Shape shape, std::span<const Tensor> inputs);

/// Throws NumericError naming `op` if any value is NaN or Inf.
void check_finite(const TensorNode& node, const char* op);

/// Checks finiteness, records the backward rule when needed and wraps the node.
Tensor finish(const char* op, std::shared_ptr<TensorNode> out, Tape::BackwardFn fn);

}  // namespace detail

}  // namespace satmap
