#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "nambert/autograd.hpp"

namespace nambert::nn {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Gradients smaller than this are compared on an absolute scale of `floor`.
  double floor = 1e-6;
  // Elements checked per parameter; 0 checks every element. Sampled elements
  // are drawn with `seed`.
  std::size_t max_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Builds the graph with `fn`, compares its analytic parameter gradients with
// central differences (f(x + eps) - f(x - eps)) / (2 eps) and reports the
// worst relative error |a - n| / max(|a|, |n|, floor). `fn` must return a
// single-element output; anything else is a ContractError. Parameter values
// are restored and gradients zeroed on return.
using GraphFn = std::function<Var(Graph<double>&)>;
GradCheckResult grad_check(const GraphFn& fn, ParamStore<double>& store, const GradCheckOptions& opts = {});

}  // namespace nambert::nn
