#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nambert/autograd.hpp"

namespace nambert::nn {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm clip, 0 disables
};

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind k);

// Applies one update to every parameter of the store and zeroes gradients.
// Adam moments are kept per parameter index, so the store layout must not
// change between steps.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);
  void step(ParamStore<T>& store);
  std::int64_t steps() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// Parameter initializers driven by an explicit engine for reproducibility.
using Rng = std::mt19937_64;

template <typename T>
Tensor<T> normal_init(const Shape& shape, double stddev, Rng& rng);
// Uniform in +-sqrt(6 / (fan_in + fan_out)) for a [fan_in, fan_out] matrix.
template <typename T>
Tensor<T> xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace nambert::nn
