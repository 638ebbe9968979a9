#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// A Tape owns every node created while evaluating an expression. Values are
// doubles; all tensors are two dimensional (vectors are 1 x n rows). Leaves
// either own their storage or view an external parameter buffer, in which
// case gradients are accumulated into a caller-provided sink so that several
// tapes can feed one gradient buffer.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace stylemt::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  std::vector<std::size_t> dims() const { return {rows, cols}; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tape;

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> storage;
  const double* data = nullptr;
  std::vector<double> grad_storage;
  double* grad = nullptr;
  bool requires_grad = false;
  std::function<void(Node&)> backward;
  Tape* tape = nullptr;

  double* ensure_grad();
};
}  // namespace detail

/// Lightweight handle to a node on a tape. Copyable; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::span<const double> value() const { return {node_->data, node_->shape.size()}; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape.cols + c]; }
  bool requires_grad() const { return node_->requires_grad; }
  /// Empty span when no gradient reached this node.
  std::span<const double> grad() const;
  Tape& tape() const { return *node_->tape; }
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Tape;
  explicit Var(detail::Node* n) : node_(n) {}
  detail::Node* node_ = nullptr;
};

class Tape {
 public:
  /// With recording off no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Shape shape, std::vector<double> values);
  Var scalar(double v) { return constant({1, 1}, {v}); }
  /// Owned leaf whose gradient is kept on the tape.
  Var variable(Shape shape, std::vector<double> values);
  /// Leaf viewing external storage. Gradients accumulate into `grad_sink`
  /// (same size as `values`); an empty sink makes the leaf a constant.
  Var parameter(Shape shape, std::span<const double> values, std::span<double> grad_sink);

  /// Seeds d(loss)/d(loss) = 1 and runs the recorded closures in reverse.
  void backward(Var loss);
  /// Clears accumulated gradients on tape-owned nodes so backward may run again.
  void zero_grad();
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var make(Shape shape, std::vector<double> values, bool requires_grad,
           std::function<void(detail::Node&)> backward);
  static detail::Node* node(const Var& v) { return v.node_; }

 private:
  std::deque<detail::Node> nodes_;
  bool record_;
  bool backward_done_ = false;
};

// Forward operations. All throw std::invalid_argument on shape mismatch.

/// (n x k) * (k x m).
Var matmul(const Var& a, const Var& b);
/// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise (Hadamard) product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// Concatenation along axis 0 (stack rows) or axis 1 (join columns).
Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
/// Half-open range [begin, end) along the given axis.
Var slice(const Var& a, int axis, std::size_t begin, std::size_t end);
Var transpose(const Var& a);
/// Row `id` of an embedding table, as a 1 x d tensor.
Var embedding_lookup(const Var& table, int id);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
/// Shift-normalized softmax along axis 0 (per column) or axis 1 (per row).
Var softmax(const Var& a, int axis);
Var log_softmax_row(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over rows, giving a 1 x cols tensor.
Var mean_rows(const Var& a);
/// -log softmax(logits)[target] for a 1 x V row.
Var cross_entropy(const Var& logits, int target);
/// Binary cross-entropy of a 1 x 1 logit against label in {0, 1}.
Var bce_with_logit(const Var& logit, double label);
/// Same values, no gradient path back to `a`.
Var detach(const Var& a);

}  // namespace stylemt::ad
