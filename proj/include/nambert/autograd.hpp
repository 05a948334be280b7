#pragma once

// Tape-based reverse-mode differentiation. A Graph records every operation
// applied during one forward pass; backward() replays the tape in reverse and
// accumulates gradients into the ParamStore the leaves were drawn from.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nambert/tensor.hpp"

namespace nambert::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

// Named parameters in insertion order. Every parameter owns a same-shaped
// gradient buffer.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other) { *this = other; }
  ParamStore& operator=(const ParamStore& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p->name, p->value);
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->grad = Tensor<T>(init.shape());
    p->value = std::move(init);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return *params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return *params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(T(0));
  }
  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  // With track_gradients == false no backward closures are recorded
  // (inference mode).
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<T> value) { return push(std::move(value), nullptr, false); }
  Var param(Parameter<T>& p);

  const Tensor<T>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool tracking() const { return track_; }

  // Gradient buffer of a node, allocated on first use.
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty() || nodes_[id].value.empty(); }

  // Records an op output. The closure runs during backward() only when the
  // node requires a gradient.
  Var push(Tensor<T> value, BackwardFn backward, bool requires_grad);

  // Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  // Parameter gradients are accumulated into Parameter::grad.
  void backward(Var out);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool track_;
};

// ---------------------------------------------------------------------------
// Operations. Every op checks shapes and throws DimensionError naming both
// operands on mismatch.

// x[..., k] * w[k, n] -> [..., n]
template <typename T>
Var matmul(Graph<T>& g, Var x, Var w);
// x[..., n] + b[n]
template <typename T>
Var add_bias(Graph<T>& g, Var x, Var b);
// y = x w + b
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b);
template <typename T>
Var add(Graph<T>& g, Var a, Var b);
template <typename T>
Var mul(Graph<T>& g, Var a, Var b);
template <typename T>
Var scale(Graph<T>& g, Var a, T s);
template <typename T>
Var sigmoid(Graph<T>& g, Var x);
template <typename T>
Var tanh(Graph<T>& g, Var x);
// Exact (erf based) GELU.
template <typename T>
Var gelu(Graph<T>& g, Var x);
// Softmax over the last axis, max-shifted.
template <typename T>
Var softmax(Graph<T>& g, Var x);
// Normalizes over the last axis, then applies gamma * xhat + beta.
template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));
// Rows of table[V, d] picked by ids; output shape is out_prefix + [d].
template <typename T>
Var embedding(Graph<T>& g, Var table, std::span<const int> ids, const Shape& out_prefix);
// Concatenation along the last axis.
template <typename T>
Var concat_last(Graph<T>& g, std::span<const Var> parts);
template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape);
// [B, n, h * dh] -> [B * h, n, dh]
template <typename T>
Var split_heads(Graph<T>& g, Var x, std::size_t heads);
// [B * h, n, dh] -> [B, n, h * dh]
template <typename T>
Var merge_heads(Graph<T>& g, Var x, std::size_t heads);
// Batched a[G, n, k] * b[G, k, m]; with transpose_b, b is [G, m, k].
template <typename T>
Var bmm(Graph<T>& g, Var a, Var b, bool transpose_b);
// scores[B * h, n, n]: key positions with key_valid[b * n + j] == 0 receive a
// large negative offset so softmax assigns them zero weight.
template <typename T>
Var mask_keys(Graph<T>& g, Var scores, std::span<const unsigned char> key_valid, std::size_t heads);
template <typename T>
Var sum(Graph<T>& g, Var x);

struct FocalStats {
  std::size_t clamped = 0;  // probabilities floored to the epsilon
  std::size_t terms = 0;
};

inline constexpr double kProbFloor = 1e-12;

// Focal loss over rows of logits[N, m]. For every row r with weight[r] > 0
// the term -weight[r] * (1 - p)^gamma * log(p) is added, where p is the
// softmax probability of targets[r]. weight carries alpha of the row's target;
// rows with weight 0 (padding) contribute nothing. The sum is multiplied by
// `normalizer`.
template <typename T>
Var focal_loss(Graph<T>& g, Var logits, std::span<const int> targets, std::span<const T> weight, T gamma,
               T normalizer = T(1), FocalStats* stats = nullptr);

// Plain scalar form over target probabilities; used as the reference
// evaluation of the loss formula.
double focal_loss_value(std::span<const double> p, std::span<const double> alpha, double gamma,
                        FocalStats* stats = nullptr);

}  // namespace nambert::nn
