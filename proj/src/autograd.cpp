#include "nambert/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace nambert::nn {

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  Var v = push(p.value, nullptr, track_);
  nodes_[v.id].param = &p;
  return v;
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw ContractError("invalid graph variable");
  return nodes_[v.id].value;
}

template <typename T>
Tensor<T>& Graph<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
Var Graph<T>::push(Tensor<T> value, BackwardFn backward, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = track_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
void Graph<T>::backward(Var out) {
  if (!track_) throw ContractError("backward() on a graph built without gradient tracking");
  if (value(out).size() != 1) {
    throw ContractError("backward() needs a scalar output, got shape " + shape_str(value(out).shape()));
  }
  if (!nodes_[out.id].requires_grad) return;
  grad(out.id)[0] = T(1);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto& pg = n.param->grad;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatRM<T>>;
template <typename T>
using CMap = Eigen::Map<const MatRM<T>>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T, typename F, typename D>
Var unary(Graph<T>& g, Var x, F f, D dfdx) {
  const auto& xv = g.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return g.push(
      std::move(y),
      [x, dfdx](Graph<T>& gr, std::size_t self) {
        const auto& xv = gr.value(x);
        const auto& yv = gr.value(Var{self});
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x.id);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
      },
      g.requires_grad(x));
}

}  // namespace

template <typename T>
Var matmul(Graph<T>& g, Var x, Var w) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  if (wv.rank() != 2 || xv.rank() < 1 || xv.last_dim() != wv.dim(0)) shape_fail("matmul", xv.shape(), wv.shape());
  const std::size_t rows = xv.rows(), k = wv.dim(0), n = wv.dim(1);
  Shape out_shape = xv.shape();
  out_shape.back() = n;
  Tensor<T> y(out_shape);
  Map<T>(y.data(), rows, n).noalias() = CMap<T>(xv.data(), rows, k) * CMap<T>(wv.data(), k, n);
  return g.push(
      std::move(y),
      [x, w, rows, k, n](Graph<T>& gr, std::size_t self) {
        CMap<T> gy(gr.grad(self).data(), rows, n);
        if (gr.requires_grad(x)) {
          Map<T>(gr.grad(x.id).data(), rows, k).noalias() += gy * CMap<T>(gr.value(w).data(), k, n).transpose();
        }
        if (gr.requires_grad(w)) {
          Map<T>(gr.grad(w.id).data(), k, n).noalias() += CMap<T>(gr.value(x).data(), rows, k).transpose() * gy;
        }
      },
      g.requires_grad(x) || g.requires_grad(w));
}

template <typename T>
Var add_bias(Graph<T>& g, Var x, Var b) {
  const auto& xv = g.value(x);
  const auto& bv = g.value(b);
  if (bv.rank() != 1 || xv.last_dim() != bv.dim(0)) shape_fail("add_bias", xv.shape(), bv.shape());
  const std::size_t n = bv.size(), rows = xv.rows();
  Tensor<T> y = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] += bv[j];
  return g.push(
      std::move(y),
      [x, b, n, rows](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(x)) {
          auto& gx = gr.grad(x.id);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
        }
        if (gr.requires_grad(b)) {
          auto& gb = gr.grad(b.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
        }
      },
      g.requires_grad(x) || g.requires_grad(b));
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  return add_bias(g, matmul(g, x, w), b);
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.shape() != bv.shape()) shape_fail("add", av.shape(), bv.shape());
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return g.push(
      std::move(y),
      [a, b](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        for (Var v : {a, b}) {
          if (!gr.requires_grad(v)) continue;
          auto& gv = gr.grad(v.id);
          for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += gy[i];
        }
      },
      g.requires_grad(a) || g.requires_grad(b));
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.shape() != bv.shape()) shape_fail("mul", av.shape(), bv.shape());
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return g.push(
      std::move(y),
      [a, b](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(a)) {
          auto& ga = gr.grad(a.id);
          const auto& bv = gr.value(b);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (gr.requires_grad(b)) {
          auto& gb = gr.grad(b.id);
          const auto& av = gr.value(a);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
        }
      },
      g.requires_grad(a) || g.requires_grad(b));
}

template <typename T>
Var scale(Graph<T>& g, Var a, T s) {
  return unary(
      g, a, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  return unary(
      g, x,
      [](T v) {
        // split by sign so exp never overflows
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var tanh(Graph<T>& g, Var x) {
  return unary(
      g, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var gelu(Graph<T>& g, Var x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      g, x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(kInvSqrt2))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2)));
        const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Var softmax(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  const std::size_t n = xv.last_dim(), rows = xv.rows();
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* out = y.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  }
  return g.push(
      std::move(y),
      [x, n, rows](Graph<T>& gr, std::size_t self) {
        const auto& yv = gr.value(Var{self});
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x.id);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = yv.data() + r * n;
          const T* gyr = gy.data() + r * n;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gyr[j];
          T* gxr = gx.data() + r * n;
          for (std::size_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gyr[j] - dot);
        }
      },
      g.requires_grad(x));
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
  const auto& xv = g.value(x);
  const auto& gv = g.value(gamma);
  const auto& bv = g.value(beta);
  const std::size_t n = xv.last_dim(), rows = xv.rows();
  if (gv.size() != n || bv.size() != n) shape_fail("layer_norm", xv.shape(), gv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat[r * n + j] = (in[j] - mean) * inv_std[r];
  }
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = gv[j] * xhat[r * n + j] + bv[j];
  const bool rg = g.requires_grad(x) || g.requires_grad(gamma) || g.requires_grad(beta);
  return g.push(
      std::move(y),
      [x, gamma, beta, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& gr,
                                                                                        std::size_t self) {
        const auto& gy = gr.grad(self);
        const auto& gv = gr.value(gamma);
        if (gr.requires_grad(gamma) || gr.requires_grad(beta)) {
          auto& gg = gr.grad(gamma.id);
          auto& gb = gr.grad(beta.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) {
              gg[j] += gy[r * n + j] * xhat[r * n + j];
              gb[j] += gy[r * n + j];
            }
        }
        if (!gr.requires_grad(x)) return;
        auto& gx = gr.grad(x.id);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T d = gy[r * n + j] * gv[j];
            mean_d += d;
            mean_dx += d * xhat[r * n + j];
          }
          mean_d /= T(n);
          mean_dx /= T(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = gy[r * n + j] * gv[j];
            gx[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
          }
        }
      },
      rg);
}

template <typename T>
Var embedding(Graph<T>& g, Var table, std::span<const int> ids, const Shape& out_prefix) {
  const auto& tv = g.value(table);
  if (tv.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_str(tv.shape()));
  if (shape_numel(out_prefix) != ids.size()) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids do not fill " + shape_str(out_prefix));
  }
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  Shape out_shape = out_prefix;
  out_shape.push_back(d);
  Tensor<T> y(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InputError("embedding: id " + std::to_string(ids[i]) + " out of range for table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, y.data() + i * d);
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  return g.push(
      std::move(y),
      [table, d, id_copy = std::move(id_copy)](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        auto& gt = gr.grad(table.id);
        for (std::size_t i = 0; i < id_copy.size(); ++i) {
          T* row = gt.data() + static_cast<std::size_t>(id_copy[i]) * d;
          for (std::size_t j = 0; j < d; ++j) row[j] += gy[i * d + j];
        }
      },
      g.requires_grad(table));
}

template <typename T>
Var concat_last(Graph<T>& g, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  const Shape& first = g.shape(parts[0]);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool rg = false;
  for (Var p : parts) {
    const auto& s = g.shape(p);
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      shape_fail("concat_last", first, s);
    }
    widths.push_back(s.back());
    total += s.back();
    rg = rg || g.requires_grad(p);
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor<T> y(out_shape);
  const std::size_t rows = y.rows();
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = g.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.data() + r * widths[k], widths[k], y.data() + r * total + off);
    off += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.push(
      std::move(y),
      [inputs, widths, total, rows](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (gr.requires_grad(inputs[k])) {
            auto& gp = gr.grad(inputs[k].id);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += gy[r * total + off + j];
          }
          off += widths[k];
        }
      },
      rg);
}

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> y = g.value(x).reshaped(std::move(shape));
  return g.push(
      std::move(y),
      [x](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x.id);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
      },
      g.requires_grad(x));
}

namespace {

// Moves [B, n, h, dh] <-> [B, h, n, dh]; forward selects the direction.
template <typename T>
void permute_heads(const T* src, T* dst, std::size_t batch, std::size_t n, std::size_t heads, std::size_t dh,
                   bool to_heads, bool accumulate) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t merged = ((b * n + i) * heads + h) * dh;
        const std::size_t split = ((b * heads + h) * n + i) * dh;
        const T* s = src + (to_heads ? merged : split);
        T* d = dst + (to_heads ? split : merged);
        if (accumulate)
          for (std::size_t k = 0; k < dh; ++k) d[k] += s[k];
        else
          std::copy_n(s, dh, d);
      }
}

}  // namespace

template <typename T>
Var split_heads(Graph<T>& g, Var x, std::size_t heads) {
  const auto& xv = g.value(x);
  if (xv.rank() != 3 || heads == 0 || xv.dim(2) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_str(xv.shape()) + " into " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t batch = xv.dim(0), n = xv.dim(1), dh = xv.dim(2) / heads;
  Tensor<T> y({batch * heads, n, dh});
  permute_heads(xv.data(), y.data(), batch, n, heads, dh, true, false);
  return g.push(
      std::move(y),
      [x, batch, n, heads, dh](Graph<T>& gr, std::size_t self) {
        permute_heads(gr.grad(self).data(), gr.grad(x.id).data(), batch, n, heads, dh, false, true);
      },
      g.requires_grad(x));
}

template <typename T>
Var merge_heads(Graph<T>& g, Var x, std::size_t heads) {
  const auto& xv = g.value(x);
  if (xv.rank() != 3 || heads == 0 || xv.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: cannot merge " + shape_str(xv.shape()) + " over " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t batch = xv.dim(0) / heads, n = xv.dim(1), dh = xv.dim(2);
  Tensor<T> y({batch, n, heads * dh});
  permute_heads(xv.data(), y.data(), batch, n, heads, dh, false, false);
  return g.push(
      std::move(y),
      [x, batch, n, heads, dh](Graph<T>& gr, std::size_t self) {
        permute_heads(gr.grad(self).data(), gr.grad(x.id).data(), batch, n, heads, dh, true, true);
      },
      g.requires_grad(x));
}

template <typename T>
Var bmm(Graph<T>& g, Var a, Var b, bool transpose_b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
    shape_fail("bmm", av.shape(), bv.shape());
  }
  const std::size_t groups = av.dim(0), n = av.dim(1), k = av.dim(2);
  const std::size_t m = transpose_b ? bv.dim(1) : bv.dim(2);
  Tensor<T> y({groups, n, m});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    CMap<T> A(av.data() + gi * n * k, n, k);
    Map<T> Y(y.data() + gi * n * m, n, m);
    if (transpose_b)
      Y.noalias() = A * CMap<T>(bv.data() + gi * m * k, m, k).transpose();
    else
      Y.noalias() = A * CMap<T>(bv.data() + gi * k * m, k, m);
  }
  return g.push(
      std::move(y),
      [a, b, transpose_b, groups, n, k, m](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        const auto& av = gr.value(a);
        const auto& bv = gr.value(b);
        const bool ga_on = gr.requires_grad(a), gb_on = gr.requires_grad(b);
        T* ga = ga_on ? gr.grad(a.id).data() : nullptr;
        T* gb = gb_on ? gr.grad(b.id).data() : nullptr;
        for (std::size_t gi = 0; gi < groups; ++gi) {
          CMap<T> GY(gy.data() + gi * n * m, n, m);
          CMap<T> A(av.data() + gi * n * k, n, k);
          if (transpose_b) {
            CMap<T> B(bv.data() + gi * m * k, m, k);
            if (ga_on) Map<T>(ga + gi * n * k, n, k).noalias() += GY * B;
            if (gb_on) Map<T>(gb + gi * m * k, m, k).noalias() += GY.transpose() * A;
          } else {
            CMap<T> B(bv.data() + gi * k * m, k, m);
            if (ga_on) Map<T>(ga + gi * n * k, n, k).noalias() += GY * B.transpose();
            if (gb_on) Map<T>(gb + gi * k * m, k, m).noalias() += A.transpose() * GY;
          }
        }
      },
      g.requires_grad(a) || g.requires_grad(b));
}

template <typename T>
Var mask_keys(Graph<T>& g, Var scores, std::span<const unsigned char> key_valid, std::size_t heads) {
  const auto& sv = g.value(scores);
  if (sv.rank() != 3 || heads == 0 || sv.dim(0) % heads != 0 || sv.dim(1) != sv.dim(2) ||
      key_valid.size() != (sv.dim(0) / heads) * sv.dim(2)) {
    throw DimensionError("mask_keys: scores " + shape_str(sv.shape()) + " do not match a mask of " +
                         std::to_string(key_valid.size()) + " entries");
  }
  constexpr T kMasked = T(-1e9);
  const std::size_t n = sv.dim(1);
  Tensor<T> y = sv;
  for (std::size_t gi = 0; gi < sv.dim(0); ++gi) {
    const std::size_t b = gi / heads;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (!key_valid[b * n + j]) y[(gi * n + i) * n + j] += kMasked;
  }
  return g.push(
      std::move(y),
      [scores](Graph<T>& gr, std::size_t self) {
        const auto& gy = gr.grad(self);
        auto& gs = gr.grad(scores.id);
        for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += gy[i];
      },
      g.requires_grad(scores));
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  T total = 0;
  for (T v : xv.values()) total += v;
  return g.push(
      Tensor<T>({1}, {total}),
      [x](Graph<T>& gr, std::size_t self) {
        const T gy = gr.grad(self)[0];
        auto& gx = gr.grad(x.id);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
      },
      g.requires_grad(x));
}

template <typename T>
Var focal_loss(Graph<T>& g, Var logits, std::span<const int> targets, std::span<const T> weight, T gamma,
               T normalizer, FocalStats* stats) {
  const auto& zv = g.value(logits);
  const std::size_t m = zv.last_dim(), rows = zv.rows();
  if (targets.size() != rows || weight.size() != rows) {
    throw DimensionError("focal_loss: " + std::to_string(rows) + " logit rows vs " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(weight.size()) + " weights");
  }
  if (gamma < T(0)) throw ConfigError("focal_loss: gamma must be >= 0");
  // Per active row keep the softmax probabilities for backward.
  std::vector<T> probs(rows * m, T(0));
  T total = 0;
  FocalStats local;
  for (std::size_t r = 0; r < rows; ++r) {
    if (weight[r] == T(0)) continue;
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= m) throw InputError("focal_loss: target id out of range");
    const T* z = zv.data() + r * m;
    T* p = probs.data() + r * m;
    const T mx = *std::max_element(z, z + m);
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += (p[j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < m; ++j) p[j] /= s;
    // log p_t from log-sum-exp rather than log of the rounded probability
    T logp = z[t] - mx - std::log(s);
    T pt = p[t];
    if (pt < T(kProbFloor)) {
      pt = T(kProbFloor);
      logp = std::log(pt);
      ++local.clamped;
    }
    ++local.terms;
    const T modulating = gamma == T(0) ? T(1) : std::pow(T(1) - pt, gamma);
    total += -weight[r] * modulating * logp;
  }
  if (stats) {
    stats->clamped += local.clamped;
    stats->terms += local.terms;
  }
  std::vector<int> tcopy(targets.begin(), targets.end());
  std::vector<T> wcopy(weight.begin(), weight.end());
  return g.push(
      Tensor<T>({1}, {total * normalizer}),
      [logits, m, rows, gamma, normalizer, probs = std::move(probs), tcopy = std::move(tcopy),
       wcopy = std::move(wcopy)](Graph<T>& gr, std::size_t self) {
        const T gy = gr.grad(self)[0] * normalizer;
        auto& gz = gr.grad(logits.id);
        for (std::size_t r = 0; r < rows; ++r) {
          if (wcopy[r] == T(0)) continue;
          const T* p = probs.data() + r * m;
          const std::size_t t = static_cast<std::size_t>(tcopy[r]);
          const T pt = std::max(p[t], T(kProbFloor));
          const T logp = std::log(pt);
          const T q = T(1) - pt;
          // dL/dp for L = -a (1-p)^g log p
          T dl_dp = -wcopy[r] * (gamma == T(0) ? T(1) : std::pow(q, gamma)) / pt;
          if (gamma != T(0) && q > T(0)) dl_dp += wcopy[r] * gamma * std::pow(q, gamma - T(1)) * logp;
          // dp/dz_j = p (delta_jt - p_j)
          const T c = gy * dl_dp * pt;
          T* gzr = gz.data() + r * m;
          for (std::size_t j = 0; j < m; ++j) gzr[j] += c * ((j == t ? T(1) : T(0)) - p[j]);
        }
      },
      g.requires_grad(logits));
}

double focal_loss_value(std::span<const double> p, std::span<const double> alpha, double gamma, FocalStats* stats) {
  if (p.size() != alpha.size()) throw DimensionError("focal_loss_value: probability and alpha counts differ");
  if (gamma < 0) throw ConfigError("focal_loss_value: gamma must be >= 0");
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pi = p[i];
    if (pi > 1.0) throw InputError("focal_loss_value: probability above 1");
    if (!(pi >= kProbFloor)) {
      pi = kProbFloor;
      if (stats) ++stats->clamped;
    }
    if (stats) ++stats->terms;
    const double mod = gamma == 0.0 ? 1.0 : std::pow(1.0 - pi, gamma);
    total += -alpha[i] * mod * std::log(pi);
  }
  return total;
}

#define NAMBERT_INSTANTIATE(T)                                                                              \
  template class Graph<T>;                                                                                  \
  template Var matmul<T>(Graph<T>&, Var, Var);                                                              \
  template Var add_bias<T>(Graph<T>&, Var, Var);                                                            \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                                         \
  template Var add<T>(Graph<T>&, Var, Var);                                                                 \
  template Var mul<T>(Graph<T>&, Var, Var);                                                                 \
  template Var scale<T>(Graph<T>&, Var, T);                                                                 \
  template Var sigmoid<T>(Graph<T>&, Var);                                                                  \
  template Var tanh<T>(Graph<T>&, Var);                                                                     \
  template Var gelu<T>(Graph<T>&, Var);                                                                     \
  template Var softmax<T>(Graph<T>&, Var);                                                                  \
  template Var layer_norm<T>(Graph<T>&, Var, Var, Var, T);                                                  \
  template Var embedding<T>(Graph<T>&, Var, std::span<const int>, const Shape&);                            \
  template Var concat_last<T>(Graph<T>&, std::span<const Var>);                                             \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                                           \
  template Var split_heads<T>(Graph<T>&, Var, std::size_t);                                                 \
  template Var merge_heads<T>(Graph<T>&, Var, std::size_t);                                                 \
  template Var bmm<T>(Graph<T>&, Var, Var, bool);                                                           \
  template Var mask_keys<T>(Graph<T>&, Var, std::span<const unsigned char>, std::size_t);                   \
  template Var sum<T>(Graph<T>&, Var);                                                                      \
  template Var focal_loss<T>(Graph<T>&, Var, std::span<const int>, std::span<const T>, T, T, FocalStats*);

NAMBERT_INSTANTIATE(float)
NAMBERT_INSTANTIATE(double)

#undef NAMBERT_INSTANTIATE

}  // namespace nambert::nn
