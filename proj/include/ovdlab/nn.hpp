#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ovdlab/autograd.hpp"

namespace ovdlab {

// Seeded generator. Parameter initialisation derives one stream per parameter
// name, so adding or removing a parameter group never shifts the values of
// the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double normal(double mean = 0.0, double stddev = 1.0);
  double uniform(double lo = 0.0, double hi = 1.0);
  int uniform_int(int lo, int hi);  // inclusive
  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 1469598103934665603ULL);

struct Parameter {
  std::string name;
  std::string group;
  ag::Var var;
};

// Owns every trainable array of a model, keyed by a stable dotted name.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  ag::Var add_normal(const std::string& name, const std::string& group, int rows, int cols, double stddev);
  ag::Var add_constant(const std::string& name, const std::string& group, int rows, int cols, double value);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Parameter& at(const std::string& name) const;
  ag::Var var(const std::string& name) const { return at(name).var; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter> group(const std::string& group) const;
  std::set<std::string> groups() const;
  std::size_t scalar_count() const;

  // Only parameters whose group is listed receive gradients.
  void set_trainable_groups(const std::set<std::string>& groups);
  void set_all_trainable(bool on);
  void zero_grad();

  std::map<std::string, Matrix> snapshot() const;
  void restore(const std::map<std::string, Matrix>& values);

 private:
  std::uint64_t seed_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, const std::string& group, int in, int out, bool bias = true,
         double init_scale = 1.0);
  ag::Var operator()(const ag::Var& x) const;
  int in_features() const { return weight_.rows(); }
  int out_features() const { return weight_.cols(); }

 private:
  ag::Var weight_;
  ag::Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, const std::string& group, int dim);
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gain_, bias_); }

 private:
  ag::Var gain_;
  ag::Var bias_;
};

// Multi-head scaled dot-product attention with separate query and key/value
// input widths. zero_output initialises the output projection to zero.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, const std::string& group, int query_dim, int kv_dim,
                     int model_dim, int heads, bool zero_output = false);
  ag::Var operator()(const ag::Var& queries, const ag::Var& keys, const ag::Var& values, bool causal) const;

 private:
  int heads_ = 1;
  Linear wq_, wk_, wv_, wo_;
};

}  // namespace ovdlab
