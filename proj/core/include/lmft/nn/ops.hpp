#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lmft/nn/autograd.hpp"
#include "lmft/nn/tensor.hpp"

// Differentiable ops over Tape/Var. Every op validates shapes, computes its
// value eagerly and records a closure that pushes gradients to its inputs.

namespace lmft::nn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
ConstMatMap<T> as_matrix(const BasicTensor<T>& t) {
  return ConstMatMap<T>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}
template <typename T>
MatMap<T> as_matrix(BasicTensor<T>& t) {
  return MatMap<T>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename T>
void require_rank2(const Var<T>& v, const char* op) {
  require(v.shape().size() == 2, std::string(op) + ": expected a matrix, got " + shape_string(v.shape()));
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape()) throw std::logic_error("vars belong to different tapes");
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  detail::require(b.shape()[0] == k, "matmul: inner extents differ " + shape_string(a.shape()) + " x " +
                                         shape_string(b.shape()));
  BasicTensor<T> out(Shape{m, n});
  detail::as_matrix(out).noalias() = detail::as_matrix(a.value()) * detail::as_matrix(b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, std::size_t self) {
    const auto g = detail::as_matrix(tp.grad_of(self));
    if (tp.requires_grad(ia)) {
      detail::as_matrix(tp.grad_of(ia)).noalias() += g * detail::as_matrix(tp.value_of(ib)).transpose();
    }
    if (tp.requires_grad(ib)) {
      detail::as_matrix(tp.grad_of(ib)).noalias() += detail::as_matrix(tp.value_of(ia)).transpose() * g;
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape()->record("add", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    for (std::size_t in : {ia, ib}) {
      if (!tp.requires_grad(in)) continue;
      auto& gi = tp.grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

/// x[m×n] + bias[n], broadcast over rows.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  detail::require_same_tape(x, bias);
  detail::require_rank2(x, "add_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  detail::require(bias.shape() == Shape{n}, "add_bias: bias must have shape [" + std::to_string(n) + "]");
  BasicTensor<T> out = x.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  const std::size_t ix = x.index(), ib = bias.index();
  return x.tape()->record("add_bias", std::move(out), {ix, ib}, [ix, ib, m, n](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    if (tp.requires_grad(ix)) {
      auto& gx = tp.grad_of(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad_of(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.storage()) v *= s;
  const std::size_t ix = x.index();
  return x.tape()->record("scale", std::move(out), {ix}, [ix, s](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gx = tp.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

/// Sum of all elements as a rank-0 tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().storage()) acc += v;
  const std::size_t ix = x.index();
  return x.tape()->record("sum", BasicTensor<T>::scalar(acc), {ix}, [ix](Tape<T>& tp, std::size_t self) {
    const T g = tp.grad_of(self)[0];
    for (auto& v : tp.grad_of(ix).storage()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// Row-wise layer normalization with affine gamma/beta of shape [n].
template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  detail::require_rank2(x, "layernorm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  detail::require(gamma.shape() == Shape{n} && beta.shape() == Shape{n}, "layernorm: affine shape mismatch");
  auto xhat = std::make_shared<std::vector<T>>(m * n);
  auto inv_std = std::make_shared<std::vector<T>>(m);
  BasicTensor<T> out(Shape{m, n});
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    T mu{0};
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t c = 0; c < n; ++c) {
      const T d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (xv[r * n + c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.index(), ig = gamma.index(), ib = beta.index();
  return x.tape()->record(
      "layernorm", std::move(out), {ix, ig, ib}, [=](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad_of(self);
        const auto& gv2 = tp.value_of(ig);
        if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
          const bool dg = tp.requires_grad(ig), db = tp.requires_grad(ib);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) {
              if (dg) tp.grad_of(ig)[c] += g[r * n + c] * (*xhat)[r * n + c];
              if (db) tp.grad_of(ib)[c] += g[r * n + c];
            }
        }
        if (!tp.requires_grad(ix)) return;
        auto& gx = tp.grad_of(ix);
        for (std::size_t r = 0; r < m; ++r) {
          T s1{0}, s2{0};
          for (std::size_t c = 0; c < n; ++c) {
            const T dh = g[r * n + c] * gv2[c];
            s1 += dh;
            s2 += dh * (*xhat)[r * n + c];
          }
          const T k = (*inv_std)[r] / static_cast<T>(n);
          for (std::size_t c = 0; c < n; ++c) {
            const T dh = g[r * n + c] * gv2[c];
            gx[r * n + c] += k * (static_cast<T>(n) * dh - s1 - (*xhat)[r * n + c] * s2);
          }
        }
      });
}

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.storage()) v = T(0.5) * v * (T{1} + std::erf(v / std::numbers::sqrt2_v<T>));
  const std::size_t ix = x.index();
  return x.tape()->record("gelu", std::move(out), {ix}, [ix](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto& xv = tp.value_of(ix);
    auto& gx = tp.grad_of(ix);
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T{1} + std::erf(v / std::numbers::sqrt2_v<T>));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

/// Softmax along `axis`, stabilized by subtracting the running max.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const Shape& shape = x.shape();
  detail::require(axis < shape.size(), "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  BasicTensor<T> out = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, out[base + j * inner]);
      T z{0};
      for (std::size_t j = 0; j < n; ++j) {
        T& v = out[base + j * inner];
        v = std::exp(v - mx);
        z += v;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  const std::size_t ix = x.index();
  return x.tape()->record("softmax", std::move(out), {ix}, [=](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto& y = tp.value_of(self);
    auto& gx = tp.grad_of(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
  });
}

/// Mean negative log-softmax at each row's label.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  detail::require(labels.size() == b, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                          std::to_string(b) + " rows");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(c) +
                              ")");
    }
  }
  const auto& z = logits.value();
  auto probs = std::make_shared<std::vector<T>>(b * c);
  T loss{0};
  for (std::size_t r = 0; r < b; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[r * c + j]);
    T s{0};
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[r * c + j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(z[r * c + j] - lse);
    loss += lse - z[r * c + static_cast<std::size_t>(labels[r])];
  }
  loss /= static_cast<T>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t il = logits.index();
  return logits.tape()->record("cross_entropy", BasicTensor<T>::scalar(loss), {il},
                               [=](Tape<T>& tp, std::size_t self) {
                                 const T g = tp.grad_of(self)[0] / static_cast<T>(b);
                                 auto& gl = tp.grad_of(il);
                                 for (std::size_t r = 0; r < b; ++r)
                                   for (std::size_t j = 0; j < c; ++j) {
                                     const T onehot = (static_cast<int>(j) == lab[r]) ? T{1} : T{0};
                                     gl[r * c + j] += g * ((*probs)[r * c + j] - onehot);
                                   }
                               });
}

/// Averages consecutive row segments: x[N×d] with lengths summing to N -> [B×d].
template <typename T>
Var<T> segment_mean_pool(const Var<T>& x, std::span<const std::size_t> lengths) {
  detail::require_rank2(x, "segment_mean_pool");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::size_t total = 0;
  for (std::size_t l : lengths) {
    detail::require(l > 0, "segment_mean_pool: zero-length segment");
    total += l;
  }
  detail::require(total == n && !lengths.empty(), "segment_mean_pool: lengths do not cover the rows");
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  BasicTensor<T> out(Shape{lens.size(), d});
  const auto& xv = x.value();
  std::size_t row = 0;
  for (std::size_t s = 0; s < lens.size(); ++s) {
    for (std::size_t r = 0; r < lens[s]; ++r, ++row)
      for (std::size_t c = 0; c < d; ++c) out[s * d + c] += xv[row * d + c];
    for (std::size_t c = 0; c < d; ++c) out[s * d + c] /= static_cast<T>(lens[s]);
  }
  const std::size_t ix = x.index();
  return x.tape()->record("segment_mean_pool", std::move(out), {ix}, [=](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gx = tp.grad_of(ix);
    std::size_t row2 = 0;
    for (std::size_t s = 0; s < lens.size(); ++s) {
      const T inv = T{1} / static_cast<T>(lens[s]);
      for (std::size_t r = 0; r < lens[s]; ++r, ++row2)
        for (std::size_t c = 0; c < d; ++c) gx[row2 * d + c] += g[s * d + c] * inv;
    }
  });
}

template <typename T>
Var<T> mean_pool(const Var<T>& x) {
  const std::size_t n = x.shape().at(0);
  return segment_mean_pool(x, std::span<const std::size_t>(&n, 1));
}

/// Row lookup table[V×d] at `indices` -> [n×d]; gradients scatter-add.
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::size_t> indices) {
  detail::require_rank2(table, "gather_rows");
  detail::require(!indices.empty(), "gather_rows: empty index list");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  BasicTensor<T> out(Shape{idx.size(), d});
  const auto& tv = table.value();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= v) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[r]) + " outside table of " +
                              std::to_string(v) + " rows");
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  const std::size_t it = table.index();
  return table.tape()->record("gather_rows", std::move(out), {it}, [=](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gt = tp.grad_of(it);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) gt[idx[r] * d + c] += g[r * d + c];
  });
}

/// Inverted dropout; identity when rate == 0.
template <typename T, typename Rng>
Var<T> dropout(const Var<T>& x, T rate, Rng& rng) {
  if (rate <= T{0}) return x;
  detail::require(rate < T{1}, "dropout: rate must be < 1");
  auto keep = std::make_shared<std::vector<T>>(x.value().size());
  std::bernoulli_distribution coin(1.0 - static_cast<double>(rate));
  const T s = T{1} / (T{1} - rate);
  BasicTensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*keep)[i] = coin(rng) ? s : T{0};
    out[i] *= (*keep)[i];
  }
  const std::size_t ix = x.index();
  return x.tape()->record("dropout", std::move(out), {ix}, [=](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gx = tp.grad_of(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*keep)[i];
  });
}

/// Multi-head scaled dot-product attention over packed rows, restricted to
/// consecutive segments of the given lengths. Only the diagonal blocks are
/// ever materialized; cross-segment scores are never formed, which is the
/// same as adding -inf to them before the softmax.
template <typename T>
Var<T> segment_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t n_heads,
                         std::span<const std::size_t> lengths) {
  using detail::ConstStridedMap;
  using detail::RowMat;
  using detail::StridedMap;
  detail::require_rank2(q, "segment_attention");
  detail::require(q.shape() == k.shape() && q.shape() == v.shape(), "segment_attention: q/k/v shapes differ");
  const std::size_t n = q.shape()[0], d = q.shape()[1];
  detail::require(n_heads > 0 && d % n_heads == 0, "segment_attention: dim not divisible by heads");
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  std::vector<std::size_t> offsets(lens.size());
  std::size_t total = 0, prob_size = 0;
  for (std::size_t s = 0; s < lens.size(); ++s) {
    detail::require(lens[s] > 0, "segment_attention: zero-length segment");
    offsets[s] = total;
    total += lens[s];
    prob_size += lens[s] * lens[s] * n_heads;
  }
  detail::require(total == n, "segment_attention: lengths do not cover the rows");
  const std::size_t dh = d / n_heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<AlignedVector<T>>(prob_size);

  BasicTensor<T> out(Shape{n, d});
  const T* qd = q.value().data().data();
  const T* kd = k.value().data().data();
  const T* vd = v.value().data().data();
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
  std::size_t pofs = 0;
  for (std::size_t s = 0; s < lens.size(); ++s) {
    const auto L = static_cast<Eigen::Index>(lens[s]);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t base = offsets[s] * d + h * dh;
      ConstStridedMap<T> Q(qd + base, L, static_cast<Eigen::Index>(dh), stride);
      ConstStridedMap<T> K(kd + base, L, static_cast<Eigen::Index>(dh), stride);
      ConstStridedMap<T> V(vd + base, L, static_cast<Eigen::Index>(dh), stride);
      Eigen::Map<RowMat<T>> P(probs->data() + pofs, L, L);
      P.noalias() = (Q * K.transpose()) * sc;
      for (Eigen::Index r = 0; r < L; ++r) {
        auto row = P.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      StridedMap<T> O(out.data().data() + base, L, static_cast<Eigen::Index>(dh), stride);
      O.noalias() = P * V;
      pofs += lens[s] * lens[s];
    }
  }

  const std::size_t iq = q.index(), ik = k.index(), iv = v.index();
  return q.tape()->record(
      "segment_attention", std::move(out), {iq, ik, iv}, [=](Tape<T>& tp, std::size_t self) {
        const T* gd = tp.grad_of(self).data().data();
        const T* qd2 = tp.value_of(iq).data().data();
        const T* kd2 = tp.value_of(ik).data().data();
        const T* vd2 = tp.value_of(iv).data().data();
        const bool need_q = tp.requires_grad(iq), need_k = tp.requires_grad(ik), need_v = tp.requires_grad(iv);
        T* gq = need_q ? tp.grad_of(iq).data().data() : nullptr;
        T* gk = need_k ? tp.grad_of(ik).data().data() : nullptr;
        T* gv = need_v ? tp.grad_of(iv).data().data() : nullptr;
        const Eigen::OuterStride<> st(static_cast<Eigen::Index>(d));
        const auto DH = static_cast<Eigen::Index>(dh);
        std::size_t po = 0;
        RowMat<T> dP;
        RowMat<T> dS;
        for (std::size_t s = 0; s < lens.size(); ++s) {
          const auto L = static_cast<Eigen::Index>(lens[s]);
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t base = offsets[s] * d + h * dh;
            Eigen::Map<const RowMat<T>> P(probs->data() + po, L, L);
            ConstStridedMap<T> G(gd + base, L, DH, st);
            ConstStridedMap<T> Q(qd2 + base, L, DH, st);
            ConstStridedMap<T> K(kd2 + base, L, DH, st);
            ConstStridedMap<T> V(vd2 + base, L, DH, st);
            if (need_v) StridedMap<T>(gv + base, L, DH, st).noalias() += P.transpose() * G;
            if (need_q || need_k) {
              dP.noalias() = G * V.transpose();
              const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (dP.array() * P.array()).rowwise().sum();
              dP.colwise() -= rowdot;
              dS = P.cwiseProduct(dP) * sc;
              if (need_q) StridedMap<T>(gq + base, L, DH, st).noalias() += dS * K;
              if (need_k) StridedMap<T>(gk + base, L, DH, st).noalias() += dS.transpose() * Q;
            }
            po += lens[s] * lens[s];
          }
        }
      });
}

}  // namespace lmft::nn
