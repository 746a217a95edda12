#include "ovdlab/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace ovdlab::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

Var make(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Var(std::move(n));
}

void accumulate(Node& target, const Matrix& g) {
  if (!target.requires_grad) return;
  Matrix& buf = target.grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Matrix& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
  return grad;
}

Var Var::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::leaf(Matrix value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

double Var::item() const {
  if (node_->value.size() != 1) throw std::logic_error("item() on a non-scalar Var");
  return node_->value[0];
}

Matrix Var::grad() const {
  if (node_->grad.empty()) return Matrix(rows(), cols());
  return node_->grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (root.value().size() != 1) throw std::logic_error("backward: root must be 1x1");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Intermediate gradients are not needed after the sweep.
  for (Node* n : order) {
    if (n->backward) n->grad = Matrix();
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Matrix out = ovdlab::matmul(a.value(), b.value());
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      matmul_accumulate(self.grad, ovdlab::transpose(pb.value), pa.grad_buffer());
    }
    if (pb.requires_grad) {
      matmul_accumulate(ovdlab::transpose(pa.value), self.grad, pb.grad_buffer());
    }
  });
}

Var transpose(const Var& a) {
  return make(ovdlab::transpose(a.value()), {a.node()},
              [](Node& self) { accumulate(*self.parents[0], ovdlab::transpose(self.grad)); });
}

Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Matrix& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Matrix& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Matrix& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "div: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Matrix& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      Matrix& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1xC");
  Matrix out = a.value();
  const int c = a.cols();
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < c; ++j) out(i, j) += row.value()(0, j);
  return make(std::move(out), {a.node(), row.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Matrix& g = self.parents[1]->grad_buffer();
      for (int i = 0; i < self.grad.rows(); ++i)
        for (int j = 0; j < self.grad.cols(); ++j) g(0, j) += self.grad(i, j);
    }
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value();
  for (auto& v : out.values()) v *= s;
  return make(std::move(out), {a.node()}, [s](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Var scale_by(const Var& a, const Var& s) {
  require(s.value().size() == 1, "scale_by: scale must be 1x1");
  const double sv = s.value()[0];
  Matrix out = a.value();
  for (auto& v : out.values()) v *= sv;
  return make(std::move(out), {a.node(), s.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& ps = *self.parents[1];
    const double sv = ps.value[0];
    if (pa.requires_grad) {
      Matrix& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sv;
    }
    if (ps.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value[i];
      ps.grad_buffer()[0] += acc;
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value();
  for (auto& v : out.values()) v += s;
  return make(std::move(out), {a.node()}, [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

namespace {

// Elementwise op with derivative computed from (input, output).
template <class F, class D>
Var unary(const Var& a, F f, D dfdx) {
  Matrix out = a.value();
  for (auto& v : out.values()) v = f(v);
  return make(std::move(out), {a.node()}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    Matrix& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

namespace {

template <class Pick>
Var select_binary(const Var& a, const Var& b, Pick pick_a) {
  require(a.value().same_shape(b.value()), "minimum/maximum: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pick_a(a.value()[i], b.value()[i]) ? a.value()[i] : b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [pick_a](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      Node& target = pick_a(pa.value[i], pb.value[i]) ? pa : pb;
      if (target.requires_grad) target.grad_buffer()[i] += self.grad[i];
    }
  });
}

}  // namespace

Var minimum(const Var& a, const Var& b) {
  return select_binary(a, b, [](double x, double y) { return x <= y; });
}

Var maximum(const Var& a, const Var& b) {
  return select_binary(a, b, [](double x, double y) { return x >= y; });
}

// ---------------------------------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make(Matrix(1, 1, s), {a.node()}, [](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    const double d = self.grad[0];
    for (auto& v : g.values()) v += d;
  });
}

Var mean(const Var& a) {
  require(a.value().size() > 0, "mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  require(a.rows() > 0, "mean_rows: no rows");
  const int r = a.rows();
  const int c = a.cols();
  Matrix out(1, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(0, j) += a.value()(i, j);
  for (int j = 0; j < c; ++j) out(0, j) /= r;
  return make(std::move(out), {a.node()}, [](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    const int rows = g.rows();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < g.cols(); ++j) g(i, j) += self.grad(0, j) / rows;
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const int c = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    require(p.cols() == c, "concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, c);
  std::vector<NodePtr> parents;
  int offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + static_cast<std::size_t>(offset) * c);
    offset += p.rows();
    parents.push_back(p.node());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        Matrix& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const int r = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    require(p.rows() == r, "concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix out(r, total);
  std::vector<NodePtr> parents;
  int offset = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < p.cols(); ++j) out(i, offset + j) = p.value()(i, j);
    offset += p.cols();
    parents.push_back(p.node());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    int offset = 0;
    for (auto& p : self.parents) {
      const int pc = p->value.cols();
      if (p->requires_grad) {
        Matrix& g = p->grad_buffer();
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < pc; ++j) g(i, j) += self.grad(i, offset + j);
      }
      offset += pc;
    }
  });
}

Var slice_rows(const Var& a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  const int c = a.cols();
  Matrix out(count, c);
  std::copy_n(a.value().data() + static_cast<std::size_t>(start) * c, static_cast<std::size_t>(count) * c, out.data());
  return make(std::move(out), {a.node()}, [start](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    const std::size_t base = static_cast<std::size_t>(start) * g.cols();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[base + i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix out(a.rows(), count);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < count; ++j) out(i, j) = a.value()(i, start + j);
  return make(std::move(out), {a.node()}, [start](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < self.grad.rows(); ++i)
      for (int j = 0; j < self.grad.cols(); ++j) g(i, start + j) += self.grad(i, j);
  });
}

Var gather_rows(const Var& table, std::span<const int> rows) {
  const int c = table.cols();
  Matrix out(static_cast<int>(rows.size()), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < table.rows(), "gather_rows: index out of range");
    auto src = table.value().row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make(std::move(out), {table.node()}, [idx = std::move(idx)](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < g.cols(); ++j) g(idx[i], j) += self.grad(static_cast<int>(i), j);
  });
}

Var add_at_row(const Var& a, int row, const Var& x) {
  require(row >= 0 && row < a.rows() && x.rows() == 1 && x.cols() == a.cols(), "add_at_row: shape mismatch");
  Matrix out = a.value();
  for (int j = 0; j < a.cols(); ++j) out(row, j) += x.value()(0, j);
  return make(std::move(out), {a.node(), x.node()}, [row](Node& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Matrix& g = self.parents[1]->grad_buffer();
      for (int j = 0; j < g.cols(); ++j) g(0, j) += self.grad(row, j);
    }
  });
}

// ---------------------------------------------------------------------------

Var softmax_rows(const Var& a, bool causal) {
  const int r = a.rows();
  const int c = a.cols();
  Matrix out(r, c);
  for (int i = 0; i < r; ++i) {
    const int limit = causal ? std::min(c, i + 1) : c;
    double mx = a.value()(i, 0);
    for (int j = 1; j < limit; ++j) mx = std::max(mx, a.value()(i, j));
    double z = 0.0;
    for (int j = 0; j < limit; ++j) {
      const double e = std::exp(a.value()(i, j) - mx);
      out(i, j) = e;
      z += e;
    }
    for (int j = 0; j < limit; ++j) out(i, j) /= z;
  }
  return make(std::move(out), {a.node()}, [](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    const Matrix& y = self.value;
    for (int i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (int j = 0; j < y.cols(); ++j) dot += y(i, j) * self.grad(i, j);
      for (int j = 0; j < y.cols(); ++j) g(i, j) += y(i, j) * (self.grad(i, j) - dot);
    }
  });
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  const int r = a.rows();
  const int c = a.cols();
  require(gain.rows() == 1 && gain.cols() == c && bias.rows() == 1 && bias.cols() == c, "layer_norm: bad affine shape");
  Matrix out(r, c);
  Matrix xhat(r, c);
  std::vector<double> rstd(r);
  for (int i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += a.value()(i, j);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = a.value()(i, j) - mu;
      var += d * d;
    }
    var /= c;
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      xhat(i, j) = (a.value()(i, j) - mu) * rstd[i];
      out(i, j) = xhat(i, j) * gain.value()(0, j) + bias.value()(0, j);
    }
  }
  return make(std::move(out), {a.node(), gain.node(), bias.node()},
              [xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                Node& px = *self.parents[0];
                Node& pg = *self.parents[1];
                Node& pb = *self.parents[2];
                const int rows = xhat.rows();
                const int cols = xhat.cols();
                if (pg.requires_grad) {
                  Matrix& gg = pg.grad_buffer();
                  for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) gg(0, j) += self.grad(i, j) * xhat(i, j);
                }
                if (pb.requires_grad) {
                  Matrix& gb = pb.grad_buffer();
                  for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) gb(0, j) += self.grad(i, j);
                }
                if (px.requires_grad) {
                  Matrix& gx = px.grad_buffer();
                  for (int i = 0; i < rows; ++i) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (int j = 0; j < cols; ++j) {
                      const double dxh = self.grad(i, j) * pg.value(0, j);
                      m1 += dxh;
                      m2 += dxh * xhat(i, j);
                    }
                    m1 /= cols;
                    m2 /= cols;
                    for (int j = 0; j < cols; ++j) {
                      const double dxh = self.grad(i, j) * pg.value(0, j);
                      gx(i, j) += rstd[i] * (dxh - m1 - xhat(i, j) * m2);
                    }
                  }
                }
              });
}

Var l2_normalize_rows(const Var& a, double eps) {
  const int r = a.rows();
  const int c = a.cols();
  Matrix out(r, c);
  std::vector<double> norms(r);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.value()(i, j) * a.value()(i, j);
    norms[i] = std::max(std::sqrt(s), eps);
    for (int j = 0; j < c; ++j) out(i, j) = a.value()(i, j) / norms[i];
  }
  return make(std::move(out), {a.node()}, [norms = std::move(norms)](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    const Matrix& y = self.value;
    for (int i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (int j = 0; j < y.cols(); ++j) dot += y(i, j) * self.grad(i, j);
      for (int j = 0; j < y.cols(); ++j) g(i, j) += (self.grad(i, j) - y(i, j) * dot) / norms[i];
    }
  });
}

namespace {

struct Tap {
  int lo;
  int hi;
  double w;
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, hi == lo ? 0.0 : src - lo};
  }
  return taps;
}

}  // namespace

Var resize_bilinear(const Var& a, int h, int w, int oh, int ow) {
  require(h > 0 && w > 0 && a.rows() == h * w, "resize_bilinear: input is not h*w rows");
  require(oh > 0 && ow > 0, "resize_bilinear: empty output grid");
  const int c = a.cols();
  auto ty = resize_taps(h, oh);
  auto tx = resize_taps(w, ow);
  const Matrix& v = a.value();
  Matrix out(oh * ow, c);
  // Lerp form a + w*(b - a) keeps constant maps exactly constant.
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const int r00 = ty[y].lo * w + tx[x].lo;
      const int r01 = ty[y].lo * w + tx[x].hi;
      const int r10 = ty[y].hi * w + tx[x].lo;
      const int r11 = ty[y].hi * w + tx[x].hi;
      for (int k = 0; k < c; ++k) {
        const double top = v(r00, k) + tx[x].w * (v(r01, k) - v(r00, k));
        const double bot = v(r10, k) + tx[x].w * (v(r11, k) - v(r10, k));
        out(y * ow + x, k) = top + ty[y].w * (bot - top);
      }
    }
  }
  return make(std::move(out), {a.node()}, [ty, tx, w, ow](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    const int c = g.cols();
    for (std::size_t y = 0; y < ty.size(); ++y) {
      for (std::size_t x = 0; x < tx.size(); ++x) {
        const double wy = ty[y].w;
        const double wx = tx[x].w;
        const int r00 = ty[y].lo * w + tx[x].lo;
        const int r01 = ty[y].lo * w + tx[x].hi;
        const int r10 = ty[y].hi * w + tx[x].lo;
        const int r11 = ty[y].hi * w + tx[x].hi;
        const int ro = static_cast<int>(y) * ow + static_cast<int>(x);
        for (int k = 0; k < c; ++k) {
          const double d = self.grad(ro, k);
          g(r00, k) += d * (1 - wy) * (1 - wx);
          g(r01, k) += d * (1 - wy) * wx;
          g(r10, k) += d * wy * (1 - wx);
          g(r11, k) += d * wy * wx;
        }
      }
    }
  });
}

Var masked_cross_entropy(const Var& logits, std::span<const int> targets, std::span<const bool> mask) {
  const int r = logits.rows();
  const int v = logits.cols();
  require(static_cast<int>(targets.size()) == r && static_cast<int>(mask.size()) == r,
          "masked_cross_entropy: targets/mask length must equal logit rows");
  int count = 0;
  for (bool m : mask) count += m ? 1 : 0;
  if (count == 0) return Var::scalar(0.0);

  Matrix probs(r, v);
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    if (!mask[i]) continue;
    require(targets[i] >= 0 && targets[i] < v, "masked_cross_entropy: target out of range");
    double mx = logits.value()(i, 0);
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits.value()(i, j));
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
      probs(i, j) = std::exp(logits.value()(i, j) - mx);
      z += probs(i, j);
    }
    for (int j = 0; j < v; ++j) probs(i, j) /= z;
    total += -(logits.value()(i, targets[i]) - mx - std::log(z));
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<char> mk(mask.begin(), mask.end());
  return make(Matrix(1, 1, total / count), {logits.node()},
              [probs = std::move(probs), tg = std::move(tg), mk = std::move(mk), count](Node& self) {
                Matrix& g = self.parents[0]->grad_buffer();
                const double d = self.grad[0] / count;
                for (int i = 0; i < g.rows(); ++i) {
                  if (!mk[i]) continue;
                  for (int j = 0; j < g.cols(); ++j) g(i, j) += d * probs(i, j);
                  g(i, tg[i]) -= d;
                }
              });
}

Var sigmoid_focal_loss(const Var& logits, const Matrix& targets, double alpha, double gamma, double normalizer) {
  require(logits.value().same_shape(targets), "sigmoid_focal_loss: target shape mismatch");
  require(normalizer > 0, "sigmoid_focal_loss: normalizer must be positive");
  const Matrix& x = logits.value();
  Matrix dldx(x.rows(), x.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = stable_sigmoid(x[i]);
    if (targets[i] > 0.5) {
      const double log_p = -softplus(-x[i]);
      const double mod = std::pow(1.0 - p, gamma);
      total += alpha * mod * (-log_p);
      dldx[i] = alpha * mod * (gamma * p * log_p - (1.0 - p));
    } else {
      const double log_q = -softplus(x[i]);
      const double mod = std::pow(p, gamma);
      total += (1.0 - alpha) * mod * (-log_q);
      dldx[i] = (1.0 - alpha) * mod * (-gamma * (1.0 - p) * log_q + p);
    }
  }
  return make(Matrix(1, 1, total / normalizer), {logits.node()},
              [dldx = std::move(dldx), normalizer](Node& self) {
                Matrix& g = self.parents[0]->grad_buffer();
                const double d = self.grad[0] / normalizer;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * dldx[i];
              });
}

}  // namespace ovdlab::ag
