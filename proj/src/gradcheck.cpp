#include "nambert/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace nambert::nn {
namespace {

double evaluate(const GraphFn& fn) {
  Graph<double> g(false);
  Var out = fn(g);
  if (g.value(out).size() != 1) {
    throw ContractError("grad_check needs a scalar output, got shape " + shape_str(g.value(out).shape()));
  }
  return g.value(out)[0];
}

}  // namespace

GradCheckResult grad_check(const GraphFn& fn, ParamStore<double>& store, const GradCheckOptions& opts) {
  store.zero_grad();
  {
    Graph<double> g;
    Var out = fn(g);
    if (g.value(out).size() != 1) {
      throw ContractError("grad_check needs a scalar output, got shape " + shape_str(g.value(out).shape()));
    }
    g.backward(out);
  }
  GradCheckResult res;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    auto& p = store[pi];
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_per_param && idx.size() > opts.max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_per_param);
    }
    for (std::size_t k : idx) {
      const double orig = p.value[k];
      p.value[k] = orig + opts.epsilon;
      const double fp = evaluate(fn);
      p.value[k] = orig - opts.epsilon;
      const double fm = evaluate(fn);
      p.value[k] = orig;
      const double numeric = (fp - fm) / (2 * opts.epsilon);
      const double analytic = p.grad[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.checked;
      if (!std::isfinite(rel) || rel > res.max_rel_error) {
        res.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        res.worst_param = p.name;
        res.worst_index = k;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  store.zero_grad();
  return res;
}

}  // namespace nambert::nn
