#include "nambert/optim.hpp"

#include <cmath>

namespace nambert::nn {

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (cfg_.kind == OptimizerKind::adam &&
      (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1 || cfg_.eps <= 0)) {
    throw ConfigError("adam betas must lie in [0, 1) and eps must be > 0");
  }
}

template <typename T>
void Optimizer<T>::step(ParamStore<T>& store) {
  ++t_;
  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0) {
    double sq = 0;
    for (std::size_t i = 0; i < store.size(); ++i)
      for (T g : store[i].grad.values()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }
  if (cfg_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= T(cfg_.lr * clip_scale) * p.grad[k];
    }
  } else {
    if (m_.size() != store.size()) {
      m_.assign(store.size(), {});
      v_.assign(store.size(), {});
      for (std::size_t i = 0; i < store.size(); ++i) {
        m_[i].assign(store[i].value.size(), T(0));
        v_[i].assign(store[i].value.size(), T(0));
      }
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T step = T(cfg_.lr / bc1);
    const T inv_bc2 = T(1.0 / bc2);
    const T eps = T(cfg_.eps);
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const T g = p.grad[k] * T(clip_scale);
        m[k] = b1 * m[k] + (T(1) - b1) * g;
        v[k] = b2 * v[k] + (T(1) - b2) * g * g;
        p.value[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
      }
    }
  }
  store.zero_grad();
}

template <typename T>
Tensor<T> normal_init(const Shape& shape, double stddev, Rng& rng) {
  Tensor<T> t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = T(dist(rng));
  return t;
}

template <typename T>
Tensor<T> xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> t({fan_in, fan_out});
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : t.values()) v = T(dist(rng));
  return t;
}

template class Optimizer<float>;
template class Optimizer<double>;
template Tensor<float> normal_init<float>(const Shape&, double, Rng&);
template Tensor<double> normal_init<double>(const Shape&, double, Rng&);
template Tensor<float> xavier_init<float>(std::size_t, std::size_t, Rng&);
template Tensor<double> xavier_init<double>(std::size_t, std::size_t, Rng&);

}  // namespace nambert::nn
