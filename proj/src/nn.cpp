#include "ovdlab/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ovdlab {

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

int Rng::uniform_int(int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(engine_);
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

ag::Var ParamStore::add_normal(const std::string& name, const std::string& group, int rows, int cols,
                               double stddev) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  Rng rng(fnv1a64(name, seed_ ^ 0x9e3779b97f4a7c15ULL));
  Matrix m(rows, cols);
  if (stddev > 0) {
    for (auto& v : m.values()) v = rng.normal(0.0, stddev);
  }
  index_[name] = params_.size();
  params_.push_back({name, group, ag::Var::leaf(std::move(m), true)});
  return params_.back().var;
}

ag::Var ParamStore::add_constant(const std::string& name, const std::string& group, int rows, int cols,
                                 double value) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = params_.size();
  params_.push_back({name, group, ag::Var::leaf(Matrix(rows, cols, value), true)});
  return params_.back().var;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return params_[it->second];
}

std::vector<Parameter> ParamStore::group(const std::string& group) const {
  std::vector<Parameter> out;
  for (const auto& p : params_)
    if (p.group == group) out.push_back(p);
  return out;
}

std::set<std::string> ParamStore::groups() const {
  std::set<std::string> out;
  for (const auto& p : params_) out.insert(p.group);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParamStore::set_trainable_groups(const std::set<std::string>& groups) {
  for (auto& p : params_) p.var.set_requires_grad(groups.count(p.group) > 0);
}

void ParamStore::set_all_trainable(bool on) {
  for (auto& p : params_) p.var.set_requires_grad(on);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::map<std::string, Matrix> ParamStore::snapshot() const {
  std::map<std::string, Matrix> out;
  for (const auto& p : params_) out[p.name] = p.var.value();
  return out;
}

void ParamStore::restore(const std::map<std::string, Matrix>& values) {
  for (auto& p : params_) {
    auto it = values.find(p.name);
    if (it == values.end()) throw std::invalid_argument("restore: missing parameter " + p.name);
    if (!it->second.same_shape(p.var.value())) throw std::invalid_argument("restore: shape mismatch for " + p.name);
    p.var.mutable_value() = it->second;
  }
}

Linear::Linear(ParamStore& store, const std::string& name, const std::string& group, int in, int out, bool bias,
               double init_scale) {
  weight_ = store.add_normal(name + ".weight", group, in, out, init_scale / std::sqrt(static_cast<double>(in)));
  if (bias) bias_ = store.add_constant(name + ".bias", group, 1, out, 0.0);
}

ag::Var Linear::operator()(const ag::Var& x) const {
  auto y = ag::matmul(x, weight_);
  return bias_.defined() ? ag::add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, const std::string& group, int dim) {
  gain_ = store.add_constant(name + ".gain", group, 1, dim, 1.0);
  bias_ = store.add_constant(name + ".bias", group, 1, dim, 0.0);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, const std::string& group,
                                       int query_dim, int kv_dim, int model_dim, int heads, bool zero_output)
    : heads_(heads) {
  if (model_dim % heads != 0) throw std::invalid_argument("attention: model_dim must be divisible by heads");
  wq_ = Linear(store, name + ".q", group, query_dim, model_dim);
  wk_ = Linear(store, name + ".k", group, kv_dim, model_dim);
  wv_ = Linear(store, name + ".v", group, kv_dim, model_dim);
  wo_ = Linear(store, name + ".o", group, model_dim, query_dim, true, zero_output ? 0.0 : 1.0);
}

ag::Var MultiHeadAttention::operator()(const ag::Var& queries, const ag::Var& keys, const ag::Var& values,
                                       bool causal) const {
  const auto q = wq_(queries);
  const auto k = wk_(keys);
  const auto v = wv_(values);
  const int dh = q.cols() / heads_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ag::Var> outs;
  outs.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    const auto qh = ag::slice_cols(q, h * dh, dh);
    const auto kh = ag::slice_cols(k, h * dh, dh);
    const auto vh = ag::slice_cols(v, h * dh, dh);
    const auto scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), inv);
    outs.push_back(ag::matmul(ag::softmax_rows(scores, causal), vh));
  }
  return wo_(heads_ == 1 ? outs[0] : ag::concat_cols(outs));
}

}  // namespace ovdlab
