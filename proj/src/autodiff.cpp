#include "stylemt/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stylemt::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using detail::Node;

void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

void check_axis(int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("axis must be 0 or 1");
}

Node* N(const Var& v) { return Tape::node(v); }

bool needs(const Var& v) { return v.requires_grad(); }

// Builds a unary elementwise op from value and derivative-from-output functions.
template <class F, class DF>
Var unary(const Var& a, F f, DF df_from_out) {
  Node* na = N(a);
  std::vector<double> out(a.shape().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(na->data[i]);
  std::function<void(Node&)> bw;
  if (needs(a)) {
    bw = [na, df_from_out](Node& self) {
      double* ga = na->ensure_grad();
      for (std::size_t i = 0; i < self.shape.size(); ++i) ga[i] += self.grad[i] * df_from_out(self.data[i]);
    };
  }
  return a.tape().make(a.shape(), std::move(out), needs(a), std::move(bw));
}

}  // namespace

std::string Shape::str() const { return "(" + std::to_string(rows) + ", " + std::to_string(cols) + ")"; }

double* detail::Node::ensure_grad() {
  if (!grad) {
    grad_storage.assign(shape.size(), 0.0);
    grad = grad_storage.data();
  }
  return grad;
}

double Var::item() const {
  if (node_->shape.size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape().str());
  return node_->data[0];
}

std::span<const double> Var::grad() const {
  if (!node_->grad) return {};
  return {node_->grad, node_->shape.size()};
}

Var Tape::make(Shape shape, std::vector<double> values, bool requires_grad,
               std::function<void(Node&)> backward) {
  if (values.size() != shape.size())
    throw std::invalid_argument("value count does not match shape " + shape.str());
  Node& n = nodes_.emplace_back();
  n.shape = shape;
  n.storage = std::move(values);
  n.data = n.storage.data();
  n.requires_grad = requires_grad && record_;
  if (n.requires_grad) n.backward = std::move(backward);
  n.tape = this;
  return Var(&n);
}

Var Tape::constant(Shape shape, std::vector<double> values) { return make(shape, std::move(values), false, {}); }

Var Tape::variable(Shape shape, std::vector<double> values) {
  Var v = make(shape, std::move(values), true, {});
  return v;
}

Var Tape::parameter(Shape shape, std::span<const double> values, std::span<double> grad_sink) {
  if (values.size() != shape.size())
    throw std::invalid_argument("parameter storage does not match shape " + shape.str());
  Node& n = nodes_.emplace_back();
  n.shape = shape;
  n.data = values.data();
  n.tape = this;
  if (!grad_sink.empty() && record_) {
    if (grad_sink.size() != values.size()) throw std::invalid_argument("gradient sink size mismatch");
    n.requires_grad = true;
    n.grad = grad_sink.data();
  }
  return Var(&n);
}

void Tape::backward(Var loss) {
  if (backward_done_) throw std::logic_error("backward called twice without zero_grad()");
  if (loss.shape().size() != 1) throw std::invalid_argument("backward needs a scalar loss, got " + loss.shape().str());
  if (&loss.tape() != this) throw std::invalid_argument("loss lives on another tape");
  backward_done_ = true;
  Node* root = N(loss);
  if (!root->requires_grad) return;
  root->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->backward && it->grad) it->backward(*it);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) {
    if (!n.grad_storage.empty()) std::fill(n.grad_storage.begin(), n.grad_storage.end(), 0.0);
  }
  backward_done_ = false;
}

Var matmul(const Var& a, const Var& b) {
  same_tape(a, b);
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul shape mismatch " + a.shape().str() + " x " + b.shape().str());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Node* na = N(a);
  Node* nb = N(b);
  std::vector<double> out(n * m);
  MutMap(out.data(), n, m).noalias() = ConstMap(na->data, n, k) * ConstMap(nb->data, k, m);
  std::function<void(Node&)> bw;
  if (needs(a) || needs(b)) {
    bw = [na, nb, n, k, m](Node& self) {
      ConstMap g(self.grad, n, m);
      if (na->requires_grad) MutMap(na->ensure_grad(), n, k).noalias() += g * ConstMap(nb->data, k, m).transpose();
      if (nb->requires_grad) MutMap(nb->ensure_grad(), k, m).noalias() += ConstMap(na->data, n, k).transpose() * g;
    };
  }
  return a.tape().make({n, m}, std::move(out), needs(a) || needs(b), std::move(bw));
}

Var add(const Var& a, const Var& b) {
  same_tape(a, b);
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!(a.shape() == b.shape()) && !broadcast)
    throw std::invalid_argument("add shape mismatch " + a.shape().str() + " + " + b.shape().str());
  Node* na = N(a);
  Node* nb = N(b);
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = na->data[r * cols + c] + nb->data[broadcast ? c : r * cols + c];
  std::function<void(Node&)> bw;
  if (needs(a) || needs(b)) {
    bw = [na, nb, rows, cols, broadcast](Node& self) {
      if (na->requires_grad) {
        double* ga = na->ensure_grad();
        for (std::size_t i = 0; i < rows * cols; ++i) ga[i] += self.grad[i];
      }
      if (nb->requires_grad) {
        double* gb = nb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[broadcast ? c : r * cols + c] += self.grad[r * cols + c];
      }
    };
  }
  return a.tape().make(a.shape(), std::move(out), needs(a) || needs(b), std::move(bw));
}

Var sub(const Var& a, const Var& b) {
  same_tape(a, b);
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("sub shape mismatch " + a.shape().str() + " - " + b.shape().str());
  Node* na = N(a);
  Node* nb = N(b);
  std::vector<double> out(a.shape().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->data[i] - nb->data[i];
  std::function<void(Node&)> bw;
  if (needs(a) || needs(b)) {
    bw = [na, nb](Node& self) {
      const std::size_t sz = self.shape.size();
      if (na->requires_grad) {
        double* ga = na->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) ga[i] += self.grad[i];
      }
      if (nb->requires_grad) {
        double* gb = nb->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) gb[i] -= self.grad[i];
      }
    };
  }
  return a.tape().make(a.shape(), std::move(out), needs(a) || needs(b), std::move(bw));
}

Var mul(const Var& a, const Var& b) {
  same_tape(a, b);
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("mul shape mismatch " + a.shape().str() + " * " + b.shape().str());
  Node* na = N(a);
  Node* nb = N(b);
  std::vector<double> out(a.shape().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->data[i] * nb->data[i];
  std::function<void(Node&)> bw;
  if (needs(a) || needs(b)) {
    bw = [na, nb](Node& self) {
      const std::size_t sz = self.shape.size();
      if (na->requires_grad) {
        double* ga = na->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) ga[i] += self.grad[i] * nb->data[i];
      }
      if (nb->requires_grad) {
        double* gb = nb->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) gb[i] += self.grad[i] * na->data[i];
      }
    };
  }
  return a.tape().make(a.shape(), std::move(out), needs(a) || needs(b), std::move(bw));
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var concat(std::span<const Var> parts, int axis) {
  check_axis(axis);
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  Tape& tape = parts.front().tape();
  std::size_t rows = 0, cols = 0;
  bool grad = false;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    if (axis == 0) {
      if (p.cols() != parts.front().cols()) throw std::invalid_argument("concat(axis=0) column mismatch");
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts.front().rows()) throw std::invalid_argument("concat(axis=1) row mismatch");
      cols += p.cols();
      rows = p.rows();
    }
    grad = grad || p.requires_grad();
  }
  std::vector<Node*> nodes;
  nodes.reserve(parts.size());
  for (const Var& p : parts) nodes.push_back(N(p));
  std::vector<double> out(rows * cols);
  // offset of each part: row offset (axis 0) or column offset (axis 1)
  std::size_t off = 0;
  for (Node* p : nodes) {
    for (std::size_t r = 0; r < p->shape.rows; ++r)
      for (std::size_t c = 0; c < p->shape.cols; ++c) {
        const std::size_t dst = axis == 0 ? (off + r) * cols + c : r * cols + off + c;
        out[dst] = p->data[r * p->shape.cols + c];
      }
    off += axis == 0 ? p->shape.rows : p->shape.cols;
  }
  std::function<void(Node&)> bw;
  if (grad) {
    bw = [nodes, axis, cols](Node& self) {
      std::size_t off = 0;
      for (Node* p : nodes) {
        if (p->requires_grad) {
          double* gp = p->ensure_grad();
          for (std::size_t r = 0; r < p->shape.rows; ++r)
            for (std::size_t c = 0; c < p->shape.cols; ++c) {
              const std::size_t src = axis == 0 ? (off + r) * cols + c : r * cols + off + c;
              gp[r * p->shape.cols + c] += self.grad[src];
            }
        }
        off += axis == 0 ? p->shape.rows : p->shape.cols;
      }
    };
  }
  return tape.make({rows, cols}, std::move(out), grad, std::move(bw));
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(const Var& a, int axis, std::size_t begin, std::size_t end) {
  check_axis(axis);
  const std::size_t extent = axis == 0 ? a.rows() : a.cols();
  if (begin >= end || end > extent) throw std::invalid_argument("slice range out of bounds");
  Node* na = N(a);
  const std::size_t in_cols = a.cols();
  const std::size_t rows = axis == 0 ? end - begin : a.rows();
  const std::size_t cols = axis == 1 ? end - begin : a.cols();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = axis == 0 ? na->data[(begin + r) * in_cols + c] : na->data[r * in_cols + begin + c];
  std::function<void(Node&)> bw;
  if (needs(a)) {
    bw = [na, axis, begin, rows, cols, in_cols](Node& self) {
      double* ga = na->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t dst = axis == 0 ? (begin + r) * in_cols + c : r * in_cols + begin + c;
          ga[dst] += self.grad[r * cols + c];
        }
    };
  }
  return a.tape().make({rows, cols}, std::move(out), needs(a), std::move(bw));
}

Var transpose(const Var& a) {
  Node* na = N(a);
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n * m);
  MutMap(out.data(), m, n) = ConstMap(na->data, n, m).transpose();
  std::function<void(Node&)> bw;
  if (needs(a)) {
    bw = [na, n, m](Node& self) {
      MutMap(na->ensure_grad(), n, m) += ConstMap(self.grad, m, n).transpose();
    };
  }
  return a.tape().make({m, n}, std::move(out), needs(a), std::move(bw));
}

Var embedding_lookup(const Var& table, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
    throw std::invalid_argument("embedding id " + std::to_string(id) + " out of range " + table.shape().str());
  Node* nt = N(table);
  const std::size_t d = table.cols();
  const std::size_t row = static_cast<std::size_t>(id);
  std::vector<double> out(nt->data + row * d, nt->data + (row + 1) * d);
  std::function<void(Node&)> bw;
  if (needs(table)) {
    bw = [nt, d, row](Node& self) {
      double* g = nt->ensure_grad() + row * d;
      for (std::size_t i = 0; i < d; ++i) g[i] += self.grad[i];
    };
  }
  return table.tape().make({1, d}, std::move(out), needs(table), std::move(bw));
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Var softmax(const Var& a, int axis) {
  check_axis(axis);
  Node* na = N(a);
  const std::size_t rows = a.rows(), cols = a.cols();
  const std::size_t groups = axis == 1 ? rows : cols;
  const std::size_t len = axis == 1 ? cols : rows;
  auto index = [=](std::size_t g, std::size_t i) { return axis == 1 ? g * cols + i : i * cols + g; };
  std::vector<double> out(rows * cols);
  for (std::size_t g = 0; g < groups; ++g) {
    double mx = na->data[index(g, 0)];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, na->data[index(g, i)]);
    double z = 0;
    for (std::size_t i = 0; i < len; ++i) z += (out[index(g, i)] = std::exp(na->data[index(g, i)] - mx));
    for (std::size_t i = 0; i < len; ++i) out[index(g, i)] /= z;
  }
  std::function<void(Node&)> bw;
  if (needs(a)) {
    bw = [na, groups, len, index](Node& self) {
      double* ga = na->ensure_grad();
      for (std::size_t g = 0; g < groups; ++g) {
        double dot = 0;
        for (std::size_t i = 0; i < len; ++i) dot += self.grad[index(g, i)] * self.data[index(g, i)];
        for (std::size_t i = 0; i < len; ++i)
          ga[index(g, i)] += self.data[index(g, i)] * (self.grad[index(g, i)] - dot);
      }
    };
  }
  return a.tape().make(a.shape(), std::move(out), needs(a), std::move(bw));
}

Var log_softmax_row(const Var& a) {
  if (a.rows() != 1) throw std::invalid_argument("log_softmax_row expects a 1 x n row");
  Node* na = N(a);
  const std::size_t n = a.cols();
  double mx = na->data[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, na->data[i]);
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(na->data[i] - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = na->data[i] - lse;
  std::function<void(Node&)> bw;
  if (needs(a)) {
    bw = [na, n](Node& self) {
      double* ga = na->ensure_grad();
      double gsum = 0;
      for (std::size_t i = 0; i < n; ++i) gsum += self.grad[i];
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] - std::exp(self.data[i]) * gsum;
    };
  }
  return a.tape().make(a.shape(), std::move(out), needs(a), std::move(bw));
}

Var sum(const Var& a) {
  Node* na = N(a);
  double s = 0;
  for (std::size_t i = 0; i < a.shape().size(); ++i) s += na->data[i];
  std::function<void(Node&)> bw;
  if (needs(a)) {
    bw = [na](Node& self) {
      double* ga = na->ensure_grad();
      for (std::size_t i = 0; i < na->shape.size(); ++i) ga[i] += self.grad[0];
    };
  }
  return a.tape().make({1, 1}, {s}, needs(a), std::move(bw));
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.shape().size())); }

Var mean_rows(const Var& a) {
  Node* na = N(a);
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += na->data[r * cols + c];
  for (double& v : out) v /= static_cast<double>(rows);
  std::function<void(Node&)> bw;
  if (needs(a)) {
    bw = [na, rows, cols](Node& self) {
      double* ga = na->ensure_grad();
      const double inv = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += self.grad[c] * inv;
    };
  }
  return a.tape().make({1, cols}, std::move(out), needs(a), std::move(bw));
}

Var cross_entropy(const Var& logits, int target) {
  if (logits.rows() != 1) throw std::invalid_argument("cross_entropy expects a 1 x V row of logits");
  if (target < 0 || static_cast<std::size_t>(target) >= logits.cols())
    throw std::invalid_argument("cross_entropy target " + std::to_string(target) + " out of range");
  Node* na = N(logits);
  const std::size_t n = logits.cols();
  double mx = na->data[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, na->data[i]);
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(na->data[i] - mx);
  const double lse = mx + std::log(z);
  const double loss = lse - na->data[target];
  std::function<void(Node&)> bw;
  if (needs(logits)) {
    bw = [na, n, lse, target](Node& self) {
      double* ga = na->ensure_grad();
      const double g = self.grad[0];
      for (std::size_t i = 0; i < n; ++i) ga[i] += g * std::exp(na->data[i] - lse);
      ga[target] -= g;
    };
  }
  return logits.tape().make({1, 1}, {loss}, needs(logits), std::move(bw));
}

Var bce_with_logit(const Var& logit, double label) {
  if (logit.shape().size() != 1) throw std::invalid_argument("bce_with_logit expects a scalar logit");
  if (label != 0.0 && label != 1.0) throw std::invalid_argument("bce label must be 0 or 1");
  Node* na = N(logit);
  const double x = na->data[0];
  // log(1 + exp(-|x|)) + max(x, 0) - x * label
  const double loss = std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * label;
  std::function<void(Node&)> bw;
  if (needs(logit)) {
    bw = [na, label](Node& self) {
      const double x = na->data[0];
      const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      na->ensure_grad()[0] += self.grad[0] * (p - label);
    };
  }
  return logit.tape().make({1, 1}, {loss}, needs(logit), std::move(bw));
}

Var detach(const Var& a) {
  Node* na = N(a);
  return a.tape().make(a.shape(), std::vector<double>(na->data, na->data + a.shape().size()), false, {});
}

}  // namespace stylemt::ad
