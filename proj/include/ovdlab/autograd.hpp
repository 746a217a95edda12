#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ovdlab/matrix.hpp"

// Minimal tape-free reverse-mode autodiff over 2-D double matrices. Each op
// node keeps its parents alive; dropping the root frees the graph.
namespace ovdlab::ag {

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Returns the gradient buffer, allocating zeros on first use.
  Matrix& grad_buffer();
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var constant(Matrix value);
  static Var leaf(Matrix value, bool requires_grad);
  static Var scalar(double v) { return constant(Matrix(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  int rows() const { return node_->value.rows(); }
  int cols() const { return node_->value.cols(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient with the value's shape; zeros when nothing has flowed in.
  Matrix grad() const;
  void zero_grad() { node_->grad = Matrix(); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Accumulates d(root)/d(leaf) into every reachable node with requires_grad.
// The root must be 1x1.
void backward(const Var& root);

// While alive, ops on this thread record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// ---- linear algebra and elementwise ops ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xC row over every row of a
Var scale(const Var& a, double s);
Var scale_by(const Var& a, const Var& s);  // s is 1x1
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var abs(const Var& a);
Var exp(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var sigmoid(const Var& a);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

// ---- reductions and reshaping ----
Var sum(const Var& a);        // 1x1
Var mean(const Var& a);       // 1x1
Var mean_rows(const Var& a);  // 1xC
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, int start, int count);
Var slice_cols(const Var& a, int start, int count);
Var gather_rows(const Var& table, std::span<const int> rows);
Var add_at_row(const Var& a, int row, const Var& x);  // out = a; out[row] += x

// ---- fused neural-net ops ----
Var softmax_rows(const Var& a, bool causal);
Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
// Bilinear resize (half-pixel centers, edge clamped) of an (h*w, C) map to (oh*ow, C).
Var resize_bilinear(const Var& a, int h, int w, int oh, int ow);

// Mean negative log-likelihood of targets[i] under softmax(logits[i]) over rows
// with mask[i] set. Returns a constant 0 when no row is masked in.
Var masked_cross_entropy(const Var& logits, std::span<const int> targets, std::span<const bool> mask);

// Sigmoid focal loss summed over every element, divided by normalizer.
// targets holds 0/1 per element.
Var sigmoid_focal_loss(const Var& logits, const Matrix& targets, double alpha, double gamma, double normalizer);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

}  // namespace ovdlab::ag
