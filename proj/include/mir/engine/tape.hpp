#ifndef MIR_ENGINE_TAPE_HPP
#define MIR_ENGINE_TAPE_HPP

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "mir/common.hpp"
#include "mir/engine/kernels.hpp"
#include "mir/engine/param.hpp"
#include "mir/rng.hpp"
#include "mir/tensor.hpp"

namespace mir::engine {

enum class Mode { Train, Eval };
enum class Padding { Valid, Same };
enum class Activation { None, Relu, Softmax };

// Index map for data-movement ops (window partition, cyclic shift, patch
// extraction, padding). out[i] = src[index[i]], or 0 where index[i] < 0.
// Backward scatter-adds. Plans are immutable and shared between steps.
struct GatherPlan {
  Shape out_shape;
  std::vector<std::int64_t> index;
  std::int64_t src_numel = 0;
};

// Running statistics owned by a batchnorm layer. Updated as a side effect of
// train-mode forwards; the loss value never depends on them in train mode.
template <class T>
struct BnStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;
  bool initialized = false;
  bool warned = false;

  explicit BnStats(std::int64_t channels)
      : mean(BasicTensor<T>::zeros({channels})), var(BasicTensor<T>::full({channels}, T(1))) {}
};

// Records every differentiable op of one forward pass; backward() replays the
// stored closures in exact reverse execution order, accumulating gradients
// additively at fan-out. Single-threaded and bit-deterministic.
template <class T>
class TapeT {
 public:
  using Ref = int;

  TapeT() = default;
  TapeT(const TapeT&) = delete;             // backward closures capture `this`
  TapeT& operator=(const TapeT&) = delete;
  TapeT(TapeT&&) = delete;
  TapeT& operator=(TapeT&&) = delete;

  // ---- leaves ----

  Ref input(BasicTensor<T> v) { return add_node("input", std::move(v), false, nullptr); }

  // Leaf that receives a gradient; used by tests that differentiate wrt inputs.
  Ref input_grad(BasicTensor<T> v) { return add_node("input", std::move(v), true, nullptr); }

  Ref param(ParamT<T>& p) { return add_node("param", p.value, p.trainable, &p); }

  // ---- accessors ----

  const BasicTensor<T>& val(Ref r) const { return nodes_[static_cast<std::size_t>(r)].value; }

  BasicTensor<T>& grad(Ref r) {
    Node& n = nodes_[static_cast<std::size_t>(r)];
    return n.bound ? n.bound->grad : n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise / linear algebra ----

  Ref add(Ref a, Ref b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    require(va.same_shape(vb), Err::ShapeMismatch,
            "add: " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
    BasicTensor<T> out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    Ref r = add_node("add", std::move(out), needs(a) || needs(b), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, b] {
        const auto& g = grad(r);
        accumulate(a, g);
        accumulate(b, g);
      });
    }
    return r;
  }

  Ref scale(Ref a, T s) {
    BasicTensor<T> out = val(a);
    for (auto& x : out.data) x *= s;
    Ref r = add_node("scale", std::move(out), needs(a), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, s] {
        const auto& g = grad(r);
        auto& ga = grad(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
      });
    }
    return r;
  }

  // [M,K] x [K,N] -> [M,N]
  Ref matmul(Ref a, Ref b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0), Err::ShapeMismatch,
            "matmul: " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    const std::int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    BasicTensor<T> out({m, n});
    gemm_nn(va.data.data(), vb.data.data(), out.data.data(), m, k, n, false);
    Ref r = add_node("matmul", std::move(out), needs(a) || needs(b), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, b, m, k, n] {
        const auto& g = grad(r);
        if (needs(a))
          gemm_nt(g.data.data(), val(b).data.data(), grad(a).data.data(), m, n, k, true);
        if (needs(b))
          gemm_tn(val(a).data.data(), g.data.data(), grad(b).data.data(), k, m, n, true);
      });
    }
    return r;
  }

  // [G,M,K] x [G,K,N] -> [G,M,N]
  Ref bmm(Ref a, Ref b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(1),
            Err::ShapeMismatch, "bmm: " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    const std::int64_t gcnt = va.dim(0), m = va.dim(1), k = va.dim(2), n = vb.dim(2);
    BasicTensor<T> out({gcnt, m, n});
    for (std::int64_t i = 0; i < gcnt; ++i)
      gemm_nn(va.data.data() + i * m * k, vb.data.data() + i * k * n, out.data.data() + i * m * n,
              m, k, n, false);
    Ref r = add_node("bmm", std::move(out), needs(a) || needs(b), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, b, gcnt, m, k, n] {
        const auto& g = grad(r);
        for (std::int64_t i = 0; i < gcnt; ++i) {
          if (needs(a))
            gemm_nt(g.data.data() + i * m * n, val(b).data.data() + i * k * n,
                    grad(a).data.data() + i * m * k, m, n, k, true);
          if (needs(b))
            gemm_tn(val(a).data.data() + i * m * k, g.data.data() + i * m * n,
                    grad(b).data.data() + i * k * n, k, m, n, true);
        }
      });
    }
    return r;
  }

  // [G,M,K] x [G,N,K]^T -> [G,M,N]
  Ref bmm_nt(Ref a, Ref b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    require(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2),
            Err::ShapeMismatch, "bmm_nt: " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    const std::int64_t gcnt = va.dim(0), m = va.dim(1), k = va.dim(2), n = vb.dim(1);
    BasicTensor<T> out({gcnt, m, n});
    for (std::int64_t i = 0; i < gcnt; ++i)
      gemm_nt(va.data.data() + i * m * k, vb.data.data() + i * n * k, out.data.data() + i * m * n,
              m, k, n, false);
    Ref r = add_node("bmm_nt", std::move(out), needs(a) || needs(b), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, b, gcnt, m, k, n] {
        const auto& g = grad(r);
        for (std::int64_t i = 0; i < gcnt; ++i) {
          if (needs(a))
            gemm_nn(g.data.data() + i * m * n, val(b).data.data() + i * n * k,
                    grad(a).data.data() + i * m * k, m, n, k, true);
          if (needs(b))
            gemm_tn(g.data.data() + i * m * n, val(a).data.data() + i * m * k,
                    grad(b).data.data() + i * n * k, n, m, k, true);
        }
      });
    }
    return r;
  }

  // broadcast-add a vector over the last dimension
  Ref add_rowvec(Ref a, Ref bias) {
    const auto& va = val(a);
    const auto& vb = val(bias);
    require(vb.rank() == 1 && va.rank() >= 1 && va.dim(va.rank() - 1) == vb.dim(0),
            Err::ShapeMismatch,
            "add_rowvec: " + shape_str(va.shape) + " + " + shape_str(vb.shape));
    const std::int64_t c = vb.dim(0), rows = va.numel() / c;
    BasicTensor<T> out = va;
    for (std::int64_t rI = 0; rI < rows; ++rI)
      for (std::int64_t j = 0; j < c; ++j) out[rI * c + j] += vb[j];
    Ref r = add_node("add_rowvec", std::move(out), needs(a) || needs(bias), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, bias, rows, c] {
        const auto& g = grad(r);
        accumulate(a, g);
        if (needs(bias)) {
          auto& gb = grad(bias);
          for (std::int64_t rI = 0; rI < rows; ++rI)
            for (std::int64_t j = 0; j < c; ++j) gb[j] += g[rI * c + j];
        }
      });
    }
    return r;
  }

  Ref relu(Ref a) {
    BasicTensor<T> out = val(a);
    for (auto& x : out.data) x = x > T(0) ? x : T(0);
    Ref r = add_node("relu", std::move(out), needs(a), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a] {
        const auto& g = grad(r);
        const auto& x = val(a);
        auto& ga = grad(a);
        for (std::int64_t i = 0; i < g.numel(); ++i)
          if (x[i] > T(0)) ga[i] += g[i];
      });
    }
    return r;
  }

  Ref gelu(Ref a) {
    static const T inv_sqrt2 = T(0.70710678118654752440);
    static const T inv_sqrt2pi = T(0.39894228040143267794);
    BasicTensor<T> out = val(a);
    for (auto& x : out.data) x = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    Ref r = add_node("gelu", std::move(out), needs(a), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a] {
        const auto& g = grad(r);
        const auto& x = val(a);
        auto& ga = grad(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
          const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
          ga[i] += g[i] * (cdf + x[i] * pdf);
        }
      });
    }
    return r;
  }

  // numerically stable softmax over the last dimension
  Ref softmax_lastdim(Ref a) {
    const auto& va = val(a);
    require(va.rank() >= 1, Err::ShapeMismatch, "softmax needs rank >= 1");
    const std::int64_t k = va.dim(va.rank() - 1), rows = va.numel() / k;
    BasicTensor<T> out = va;
    for (std::int64_t rI = 0; rI < rows; ++rI) {
      T* row = out.data.data() + rI * k;
      T mx = row[0];
      for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      T sum = T(0);
      for (std::int64_t j = 0; j < k; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::int64_t j = 0; j < k; ++j) row[j] /= sum;
    }
    Ref r = add_node("softmax", std::move(out), needs(a), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, rows, k] {
        const auto& g = grad(r);
        const auto& y = val(r);
        auto& ga = grad(a);
        for (std::int64_t rI = 0; rI < rows; ++rI) {
          const T* gr = g.data.data() + rI * k;
          const T* yr = y.data.data() + rI * k;
          T dot = T(0);
          for (std::int64_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
          T* gar = ga.data.data() + rI * k;
          for (std::int64_t j = 0; j < k; ++j) gar[j] += yr[j] * (gr[j] - dot);
        }
      });
    }
    return r;
  }

  // scores [G*heads, n, n] + mask[(row/heads) % nW]; mask is a constant.
  Ref add_window_mask(Ref scores, std::shared_ptr<const BasicTensor<T>> mask, int heads) {
    const auto& vs = val(scores);
    require(vs.rank() == 3 && mask && mask->rank() == 3 && mask->dim(1) == vs.dim(1) &&
                mask->dim(2) == vs.dim(2),
            Err::ShapeMismatch, "add_window_mask: incompatible mask");
    const std::int64_t nw = mask->dim(0), per = vs.dim(1) * vs.dim(2);
    BasicTensor<T> out = vs;
    for (std::int64_t gI = 0; gI < vs.dim(0); ++gI) {
      const std::int64_t w = (gI / heads) % nw;
      const T* mrow = mask->data.data() + w * per;
      T* orow = out.data.data() + gI * per;
      for (std::int64_t j = 0; j < per; ++j) orow[j] += mrow[j];
    }
    Ref r = add_node("add_window_mask", std::move(out), needs(scores), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, scores] { accumulate(scores, grad(r)); });
    }
    return r;
  }

  // layer normalization over the last dimension
  Ref layernorm(Ref a, Ref gamma, Ref beta, T eps) {
    const auto& va = val(a);
    const auto& vg = val(gamma);
    const auto& vb = val(beta);
    const std::int64_t c = va.dim(va.rank() - 1);
    require(vg.rank() == 1 && vb.rank() == 1 && vg.dim(0) == c && vb.dim(0) == c,
            Err::ShapeMismatch, "layernorm: gamma/beta must be [" + std::to_string(c) + "]");
    const std::int64_t rows = va.numel() / c;
    BasicTensor<T> out(va.shape);
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(va.numel()));
    auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    for (std::int64_t rI = 0; rI < rows; ++rI) {
      const T* x = va.data.data() + rI * c;
      T mu = T(0);
      for (std::int64_t j = 0; j < c; ++j) mu += x[j];
      mu /= T(c);
      T var = T(0);
      for (std::int64_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= T(c);
      const T iv = T(1) / std::sqrt(var + eps);
      (*inv)[static_cast<std::size_t>(rI)] = iv;
      T* h = xhat->data() + rI * c;
      T* o = out.data.data() + rI * c;
      for (std::int64_t j = 0; j < c; ++j) {
        h[j] = (x[j] - mu) * iv;
        o[j] = vg[j] * h[j] + vb[j];
      }
    }
    Ref r = add_node("layernorm", std::move(out), needs(a) || needs(gamma) || needs(beta), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, gamma, beta, rows, c, xhat, inv] {
        const auto& g = grad(r);
        const auto& vg = val(gamma);
        for (std::int64_t rI = 0; rI < rows; ++rI) {
          const T* gr = g.data.data() + rI * c;
          const T* h = xhat->data() + rI * c;
          const T iv = (*inv)[static_cast<std::size_t>(rI)];
          if (needs(gamma)) {
            auto& gg = grad(gamma);
            for (std::int64_t j = 0; j < c; ++j) gg[j] += gr[j] * h[j];
          }
          if (needs(beta)) {
            auto& gb = grad(beta);
            for (std::int64_t j = 0; j < c; ++j) gb[j] += gr[j];
          }
          if (needs(a)) {
            T sum_dy = T(0), sum_dyh = T(0);
            for (std::int64_t j = 0; j < c; ++j) {
              const T dy = gr[j] * vg[j];
              sum_dy += dy;
              sum_dyh += dy * h[j];
            }
            auto& ga = grad(a);
            T* gar = ga.data.data() + rI * c;
            for (std::int64_t j = 0; j < c; ++j) {
              const T dy = gr[j] * vg[j];
              gar[j] += iv * (dy - sum_dy / T(c) - h[j] * sum_dyh / T(c));
            }
          }
        }
      });
    }
    return r;
  }

  Ref gather(Ref a, std::shared_ptr<const GatherPlan> plan) {
    const auto& va = val(a);
    require(plan && plan->src_numel == va.numel(), Err::ShapeMismatch,
            "gather: plan expects " + std::to_string(plan ? plan->src_numel : -1) +
                " source elements, got " + std::to_string(va.numel()));
    BasicTensor<T> out(plan->out_shape);
    const auto& idx = plan->index;
    for (std::size_t i = 0; i < idx.size(); ++i)
      out.data[i] = idx[i] >= 0 ? va.data[static_cast<std::size_t>(idx[i])] : T(0);
    Ref r = add_node("gather", std::move(out), needs(a), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, plan] {
        const auto& g = grad(r);
        auto& ga = grad(a);
        const auto& idx = plan->index;
        for (std::size_t i = 0; i < idx.size(); ++i)
          if (idx[i] >= 0) ga.data[static_cast<std::size_t>(idx[i])] += g.data[i];
      });
    }
    return r;
  }

  Ref reshape(Ref a, Shape new_shape) {
    const auto& va = val(a);
    require(numel_of(new_shape) == va.numel(), Err::ShapeMismatch,
            "reshape " + shape_str(va.shape) + " -> " + shape_str(new_shape));
    BasicTensor<T> out(std::move(new_shape), va.data);
    Ref r = add_node("reshape", std::move(out), needs(a), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a] {
        const auto& g = grad(r);
        auto& ga = grad(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      });
    }
    return r;
  }

  // [B,N,D] -> [B,D], mean over the token axis
  Ref mean_tokens(Ref a) {
    const auto& va = val(a);
    require(va.rank() == 3, Err::ShapeMismatch, "mean_tokens needs [B,N,D]");
    const std::int64_t b = va.dim(0), n = va.dim(1), d = va.dim(2);
    BasicTensor<T> out({b, d});
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t di = 0; di < d; ++di)
          out[bi * d + di] += va[(bi * n + ni) * d + di] / T(n);
    Ref r = add_node("mean_tokens", std::move(out), needs(a), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, a, b, n, d] {
        const auto& g = grad(r);
        auto& ga = grad(a);
        for (std::int64_t bi = 0; bi < b; ++bi)
          for (std::int64_t ni = 0; ni < n; ++ni)
            for (std::int64_t di = 0; di < d; ++di)
              ga[(bi * n + ni) * d + di] += g[bi * d + di] / T(n);
      });
    }
    return r;
  }

  // ---- neural net ops ----

  // y = act(x.W + b), x [B,D], w [D,M], b [M]
  Ref dense(Ref x, Ref w, Ref b, Activation act) {
    Ref y = add_rowvec(matmul(x, w), b);
    switch (act) {
      case Activation::None: return y;
      case Activation::Relu: return relu(y);
      case Activation::Softmax: return softmax_lastdim(y);
    }
    return y;
  }

  // x [B,L,Cin], kernel [K,Cin,Cout], bias [Cout]
  Ref conv1d(Ref x, Ref kernel, Ref bias, std::int64_t stride, Padding padding) {
    const auto& vx = val(x);
    const auto& vk = val(kernel);
    const auto& vb = val(bias);
    require(vx.rank() == 3 && vk.rank() == 3 && vb.rank() == 1, Err::ShapeMismatch,
            "conv1d: x [B,L,Cin], kernel [K,Cin,Cout], bias [Cout]");
    const std::int64_t b = vx.dim(0), l = vx.dim(1), cin = vx.dim(2);
    const std::int64_t kw = vk.dim(0), cout = vk.dim(2);
    require(vk.dim(1) == cin, Err::ShapeMismatch, "conv1d: kernel Cin mismatch");
    require(vb.dim(0) == cout, Err::ShapeMismatch, "conv1d: bias Cout mismatch");
    require(stride >= 1, Err::ShapeMismatch, "conv1d: stride must be >= 1");

    std::int64_t lout, pad_left;
    if (padding == Padding::Valid) {
      require(l >= kw, Err::KernelTooLarge,
              "conv1d: kernel " + std::to_string(kw) + " exceeds input length " +
                  std::to_string(l));
      lout = (l - kw) / stride + 1;
      pad_left = 0;
    } else {
      lout = (l + stride - 1) / stride;
      const std::int64_t pad_total = std::max<std::int64_t>(0, (lout - 1) * stride + kw - l);
      pad_left = pad_total / 2;  // extra zero goes on the right
    }

    // im2col: rows are receptive fields, [B*Lout, K*Cin]
    const std::int64_t kcin = kw * cin;
    auto cols = std::make_shared<BasicTensor<T>>(Shape{b * lout, kcin});
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t t = 0; t < lout; ++t) {
        T* row = cols->data.data() + (bi * lout + t) * kcin;
        for (std::int64_t ki = 0; ki < kw; ++ki) {
          const std::int64_t src = t * stride + ki - pad_left;
          if (src >= 0 && src < l) {
            const T* xs = vx.data.data() + (bi * l + src) * cin;
            for (std::int64_t ci = 0; ci < cin; ++ci) row[ki * cin + ci] = xs[ci];
          }
        }
      }
    }
    BasicTensor<T> out({b, lout, cout});
    gemm_nn(cols->data.data(), vk.data.data(), out.data.data(), b * lout, kcin, cout, false);
    for (std::int64_t rI = 0; rI < b * lout; ++rI)
      for (std::int64_t o = 0; o < cout; ++o) out[rI * cout + o] += vb[o];

    Ref r = add_node("conv1d", std::move(out), needs(x) || needs(kernel) || needs(bias), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, x, kernel, bias, cols, b, l, cin, kw, cout, lout, stride, pad_left] {
        const auto& g = grad(r);  // [B,Lout,Cout]
        const std::int64_t kcin = kw * cin;
        if (needs(bias)) {
          auto& gb = grad(bias);
          for (std::int64_t rI = 0; rI < b * lout; ++rI)
            for (std::int64_t o = 0; o < cout; ++o) gb[o] += g[rI * cout + o];
        }
        if (needs(kernel))
          gemm_tn(cols->data.data(), g.data.data(), grad(kernel).data.data(), kcin, b * lout,
                  cout, true);
        if (needs(x)) {
          BasicTensor<T> dcols({b * lout, kcin});
          gemm_nt(g.data.data(), val(kernel).data.data(), dcols.data.data(), b * lout, cout, kcin,
                  false);
          auto& gx = grad(x);
          for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t t = 0; t < lout; ++t) {
              const T* row = dcols.data.data() + (bi * lout + t) * kcin;
              for (std::int64_t ki = 0; ki < kw; ++ki) {
                const std::int64_t src = t * stride + ki - pad_left;
                if (src >= 0 && src < l) {
                  T* xs = gx.data.data() + (bi * l + src) * cin;
                  for (std::int64_t ci = 0; ci < cin; ++ci) xs[ci] += row[ki * cin + ci];
                }
              }
            }
        }
      });
    }
    return r;
  }

  // x [B,L,C]; per-channel normalization over (B,L)
  Ref batchnorm1d(Ref x, Ref gamma, Ref beta, BnStats<T>& stats, Mode mode, T momentum, T eps) {
    const auto& vx = val(x);
    const auto& vg = val(gamma);
    const auto& vb = val(beta);
    require(vx.rank() == 3, Err::ShapeMismatch, "batchnorm1d needs [B,L,C]");
    const std::int64_t c = vx.dim(2), n = vx.dim(0) * vx.dim(1);
    require(vg.dim(0) == c && vb.dim(0) == c && stats.mean.dim(0) == c, Err::ShapeMismatch,
            "batchnorm1d: channel mismatch");

    BasicTensor<T> out(vx.shape);
    if (mode == Mode::Train) {
      auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c), T(0));
      auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c), T(0));
      auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(vx.numel()));
      std::vector<T> var(static_cast<std::size_t>(c), T(0));
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) (*mean)[static_cast<std::size_t>(j)] += vx[i * c + j];
      for (std::int64_t j = 0; j < c; ++j) (*mean)[static_cast<std::size_t>(j)] /= T(n);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
          const T d = vx[i * c + j] - (*mean)[static_cast<std::size_t>(j)];
          var[static_cast<std::size_t>(j)] += d * d;
        }
      for (std::int64_t j = 0; j < c; ++j) {
        var[static_cast<std::size_t>(j)] /= T(n);
        (*inv)[static_cast<std::size_t>(j)] =
            T(1) / std::sqrt(var[static_cast<std::size_t>(j)] + eps);
      }
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
          const T h = (vx[i * c + j] - (*mean)[static_cast<std::size_t>(j)]) *
                      (*inv)[static_cast<std::size_t>(j)];
          (*xhat)[static_cast<std::size_t>(i * c + j)] = h;
          out[i * c + j] = vg[j] * h + vb[j];
        }
      // exponential moving average of running stats
      for (std::int64_t j = 0; j < c; ++j) {
        stats.mean[j] = (T(1) - momentum) * stats.mean[j] +
                        momentum * (*mean)[static_cast<std::size_t>(j)];
        stats.var[j] =
            (T(1) - momentum) * stats.var[j] + momentum * var[static_cast<std::size_t>(j)];
      }
      stats.initialized = true;

      Ref r = add_node("batchnorm1d", std::move(out),
                       needs(x) || needs(gamma) || needs(beta), nullptr);
      if (needs(r)) {
        set_back(r, [this, r, x, gamma, beta, n, c, xhat, inv] {
          const auto& g = grad(r);
          const auto& vg = val(gamma);
          std::vector<T> sum_dy(static_cast<std::size_t>(c), T(0));
          std::vector<T> sum_dyh(static_cast<std::size_t>(c), T(0));
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < c; ++j) {
              const T dy = g[i * c + j] * vg[j];
              sum_dy[static_cast<std::size_t>(j)] += dy;
              sum_dyh[static_cast<std::size_t>(j)] +=
                  dy * (*xhat)[static_cast<std::size_t>(i * c + j)];
            }
          if (needs(gamma)) {
            auto& gg = grad(gamma);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t j = 0; j < c; ++j)
                gg[j] += g[i * c + j] * (*xhat)[static_cast<std::size_t>(i * c + j)];
          }
          if (needs(beta)) {
            auto& gb = grad(beta);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
          }
          if (needs(x)) {
            auto& gx = grad(x);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t j = 0; j < c; ++j) {
                const T dy = g[i * c + j] * vg[j];
                const T h = (*xhat)[static_cast<std::size_t>(i * c + j)];
                gx[i * c + j] += (*inv)[static_cast<std::size_t>(j)] *
                                 (dy - sum_dy[static_cast<std::size_t>(j)] / T(n) -
                                  h * sum_dyh[static_cast<std::size_t>(j)] / T(n));
              }
          }
        });
      }
      return r;
    }

    // eval mode: affine transform with running stats
    if (!stats.initialized && !stats.warned) {
      std::cerr << "warning: batchnorm eval before any train step; using mean 0 / var 1\n";
      stats.warned = true;
    }
    auto rinv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
    for (std::int64_t j = 0; j < c; ++j)
      (*rinv)[static_cast<std::size_t>(j)] = T(1) / std::sqrt(stats.var[j] + eps);
    auto rmean = std::make_shared<std::vector<T>>(stats.mean.data);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        out[i * c + j] = vg[j] * (vx[i * c + j] - (*rmean)[static_cast<std::size_t>(j)]) *
                             (*rinv)[static_cast<std::size_t>(j)] +
                         vb[j];
    Ref r =
        add_node("batchnorm1d", std::move(out), needs(x) || needs(gamma) || needs(beta), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, x, gamma, beta, n, c, rinv, rmean] {
        const auto& g = grad(r);
        const auto& vg = val(gamma);
        const auto& vx = val(x);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const T iv = (*rinv)[static_cast<std::size_t>(j)];
            if (needs(x)) grad(x)[i * c + j] += g[i * c + j] * vg[j] * iv;
            if (needs(gamma))
              grad(gamma)[j] +=
                  g[i * c + j] * (vx[i * c + j] - (*rmean)[static_cast<std::size_t>(j)]) * iv;
            if (needs(beta)) grad(beta)[j] += g[i * c + j];
          }
      });
    }
    return r;
  }

  // x [B,L,C]; gradient routes to the first maximal element of each window
  Ref maxpool1d(Ref x, std::int64_t window, std::int64_t stride) {
    const auto& vx = val(x);
    require(vx.rank() == 3, Err::ShapeMismatch, "maxpool1d needs [B,L,C]");
    const std::int64_t b = vx.dim(0), l = vx.dim(1), c = vx.dim(2);
    require(window >= 1 && window <= l, Err::WindowTooLarge,
            "maxpool1d: window " + std::to_string(window) + " on length " + std::to_string(l));
    require(stride >= 1, Err::ShapeMismatch, "maxpool1d: stride must be >= 1");
    const std::int64_t lout = (l - window) / stride + 1;
    BasicTensor<T> out({b, lout, c});
    auto arg = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(b * lout * c));
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t t = 0; t < lout; ++t)
        for (std::int64_t ci = 0; ci < c; ++ci) {
          std::int64_t best = t * stride;
          T bv = vx[(bi * l + best) * c + ci];
          for (std::int64_t k = 1; k < window; ++k) {
            const T v = vx[(bi * l + t * stride + k) * c + ci];
            if (v > bv) {
              bv = v;
              best = t * stride + k;
            }
          }
          out[(bi * lout + t) * c + ci] = bv;
          (*arg)[static_cast<std::size_t>((bi * lout + t) * c + ci)] = (bi * l + best) * c + ci;
        }
    Ref r = add_node("maxpool1d", std::move(out), needs(x), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, x, arg] {
        const auto& g = grad(r);
        auto& gx = grad(x);
        for (std::int64_t i = 0; i < g.numel(); ++i)
          gx[(*arg)[static_cast<std::size_t>(i)]] += g[i];
      });
    }
    return r;
  }

  // inverted dropout: eval is the identity, train scales survivors by 1/(1-rate)
  Ref dropout(Ref x, T rate, Mode mode, std::uint64_t seed) {
    require(rate >= T(0) && rate < T(1), Err::RateOutOfRange,
            "dropout rate must be in [0,1), got " + std::to_string(rate));
    const auto& vx = val(x);
    if (mode == Mode::Eval || rate == T(0)) {
      BasicTensor<T> out = vx;
      Ref r = add_node("dropout", std::move(out), needs(x), nullptr);
      if (needs(r)) {
        set_back(r, [this, r, x] { accumulate(x, grad(r)); });
      }
      return r;
    }
    Rng rng(seed);
    const T keep_scale = T(1) / (T(1) - rate);
    auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(vx.numel()));
    BasicTensor<T> out(vx.shape);
    for (std::int64_t i = 0; i < vx.numel(); ++i) {
      const T m = rng.uniform() >= static_cast<double>(rate) ? keep_scale : T(0);
      (*mask)[static_cast<std::size_t>(i)] = m;
      out[i] = vx[i] * m;
    }
    Ref r = add_node("dropout", std::move(out), needs(x), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, x, mask] {
        const auto& g = grad(r);
        auto& gx = grad(x);
        for (std::int64_t i = 0; i < g.numel(); ++i)
          gx[i] += g[i] * (*mask)[static_cast<std::size_t>(i)];
      });
    }
    return r;
  }

  // x [B,T,Din], w [Din,4H], u [H,4H], bias [4H]; gate order [i,f,g,o]
  Ref lstm(Ref x, Ref w, Ref u, Ref bias, bool return_sequences) {
    const auto& vx = val(x);
    const auto& vw = val(w);
    const auto& vu = val(u);
    const auto& vb = val(bias);
    require(vx.rank() == 3 && vw.rank() == 2 && vu.rank() == 2 && vb.rank() == 1,
            Err::ShapeMismatch, "lstm: x [B,T,Din], w [Din,4H], u [H,4H], bias [4H]");
    const std::int64_t b = vx.dim(0), t = vx.dim(1), din = vx.dim(2);
    require(vw.dim(0) == din && vw.dim(1) % 4 == 0, Err::ShapeMismatch, "lstm: w shape");
    const std::int64_t h = vw.dim(1) / 4;
    require(vu.dim(0) == h && vu.dim(1) == 4 * h && vb.dim(0) == 4 * h, Err::ShapeMismatch,
            "lstm: u/bias shape");

    struct Saved {
      BasicTensor<T> gates;  // [B,T,4H] post-activation
      BasicTensor<T> cells;  // [B,T,H]
      BasicTensor<T> tanhc;  // [B,T,H]
      BasicTensor<T> hidden; // [B,T,H]
      Saved(std::int64_t b, std::int64_t t, std::int64_t h)
          : gates({b, t, 4 * h}), cells({b, t, h}), tanhc({b, t, h}), hidden({b, t, h}) {}
    };
    auto sv = std::make_shared<Saved>(b, t, h);

    // all input projections in one gemm
    BasicTensor<T> xw({b * t, 4 * h});
    gemm_nn(vx.data.data(), vw.data.data(), xw.data.data(), b * t, din, 4 * h, false);

    std::vector<T> hprev(static_cast<std::size_t>(b * h), T(0));
    std::vector<T> cprev(static_cast<std::size_t>(b * h), T(0));
    std::vector<T> z(static_cast<std::size_t>(b * 4 * h));
    auto sigm = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
    for (std::int64_t ti = 0; ti < t; ++ti) {
      for (std::int64_t bi = 0; bi < b; ++bi) {
        const T* src = xw.data.data() + (bi * t + ti) * 4 * h;
        T* dst = z.data() + bi * 4 * h;
        for (std::int64_t j = 0; j < 4 * h; ++j) dst[j] = src[j] + vb[j];
      }
      gemm_nn(hprev.data(), vu.data.data(), z.data(), b, h, 4 * h, true);
      for (std::int64_t bi = 0; bi < b; ++bi) {
        const T* zr = z.data() + bi * 4 * h;
        T* gr = sv->gates.data.data() + (bi * t + ti) * 4 * h;
        T* cr = sv->cells.data.data() + (bi * t + ti) * h;
        T* tr = sv->tanhc.data.data() + (bi * t + ti) * h;
        T* hr = sv->hidden.data.data() + (bi * t + ti) * h;
        T* cp = cprev.data() + bi * h;
        T* hp = hprev.data() + bi * h;
        for (std::int64_t j = 0; j < h; ++j) {
          const T gi = sigm(zr[j]);
          const T gf = sigm(zr[h + j]);
          const T gg = std::tanh(zr[2 * h + j]);
          const T go = sigm(zr[3 * h + j]);
          gr[j] = gi;
          gr[h + j] = gf;
          gr[2 * h + j] = gg;
          gr[3 * h + j] = go;
          const T cnew = gf * cp[j] + gi * gg;
          cr[j] = cnew;
          const T tc = std::tanh(cnew);
          tr[j] = tc;
          const T hnew = go * tc;
          hr[j] = hnew;
          cp[j] = cnew;
          hp[j] = hnew;
        }
      }
    }

    BasicTensor<T> out = return_sequences
                             ? sv->hidden
                             : [&] {
                                 BasicTensor<T> last({b, h});
                                 for (std::int64_t bi = 0; bi < b; ++bi)
                                   for (std::int64_t j = 0; j < h; ++j)
                                     last[bi * h + j] =
                                         sv->hidden[(bi * t + (t - 1)) * h + j];
                                 return last;
                               }();

    Ref r = add_node("lstm", std::move(out),
                     needs(x) || needs(w) || needs(u) || needs(bias), nullptr);
    if (needs(r)) {
      set_back(r, [this, r, x, w, u, bias, sv, b, t, din, h, return_sequences] {
        const auto& g = grad(r);
        const auto& vx = val(x);
        const auto& vw = val(w);
        const auto& vu = val(u);
        BasicTensor<T> dz_all({b * t, 4 * h});
        std::vector<T> dh(static_cast<std::size_t>(b * h), T(0));
        std::vector<T> dc(static_cast<std::size_t>(b * h), T(0));
        std::vector<T> dh_rec(static_cast<std::size_t>(b * h), T(0));
        for (std::int64_t ti = t - 1; ti >= 0; --ti) {
          for (std::int64_t bi = 0; bi < b; ++bi) {
            T* dhr = dh.data() + bi * h;
            if (return_sequences) {
              const T* gr = g.data.data() + (bi * t + ti) * h;
              for (std::int64_t j = 0; j < h; ++j) dhr[j] = dh_rec[bi * h + j] + gr[j];
            } else if (ti == t - 1) {
              const T* gr = g.data.data() + bi * h;
              for (std::int64_t j = 0; j < h; ++j) dhr[j] = gr[j];
            } else {
              for (std::int64_t j = 0; j < h; ++j) dhr[j] = dh_rec[bi * h + j];
            }
            const T* gates = sv->gates.data.data() + (bi * t + ti) * 4 * h;
            const T* tc = sv->tanhc.data.data() + (bi * t + ti) * h;
            const T* cl = sv->cells.data.data();
            T* dcr = dc.data() + bi * h;
            T* dzr = dz_all.data.data() + (bi * t + ti) * 4 * h;
            for (std::int64_t j = 0; j < h; ++j) {
              const T gi = gates[j], gf = gates[h + j], gg = gates[2 * h + j],
                      go = gates[3 * h + j];
              const T dout = dhr[j];
              const T d_o = dout * tc[j];
              T dcell = dcr[j] + dout * go * (T(1) - tc[j] * tc[j]);
              const T cprev = ti > 0 ? cl[(bi * t + ti - 1) * h + j] : T(0);
              const T d_i = dcell * gg;
              const T d_g = dcell * gi;
              const T d_f = dcell * cprev;
              dcr[j] = dcell * gf;  // flows to previous timestep
              dzr[j] = d_i * gi * (T(1) - gi);
              dzr[h + j] = d_f * gf * (T(1) - gf);
              dzr[2 * h + j] = d_g * (T(1) - gg * gg);
              dzr[3 * h + j] = d_o * go * (T(1) - go);
            }
          }
          // dh_rec = dz_t * U^T, per batch row
          {
            std::vector<T> dz_t(static_cast<std::size_t>(b * 4 * h));
            for (std::int64_t bi = 0; bi < b; ++bi) {
              const T* src = dz_all.data.data() + (bi * t + ti) * 4 * h;
              std::copy(src, src + 4 * h, dz_t.data() + bi * 4 * h);
            }
            gemm_nt(dz_t.data(), vu.data.data(), dh_rec.data(), b, 4 * h, h, false);
            if (needs(u) && ti > 0) {
              std::vector<T> hprev(static_cast<std::size_t>(b * h));
              for (std::int64_t bi = 0; bi < b; ++bi) {
                const T* src = sv->hidden.data.data() + (bi * t + ti - 1) * h;
                std::copy(src, src + h, hprev.data() + bi * h);
              }
              gemm_tn(hprev.data(), dz_t.data(), grad(u).data.data(), h, b, 4 * h, true);
            }
          }
        }
        if (needs(bias)) {
          auto& gb = grad(bias);
          for (std::int64_t rI = 0; rI < b * t; ++rI)
            for (std::int64_t j = 0; j < 4 * h; ++j) gb[j] += dz_all[rI * 4 * h + j];
        }
        if (needs(w))
          gemm_tn(vx.data.data(), dz_all.data.data(), grad(w).data.data(), din, b * t, 4 * h,
                  true);
        if (needs(x))
          gemm_nt(dz_all.data.data(), vw.data.data(), grad(x).data.data(), b * t, 4 * h, din,
                  true);
      });
    }
    return r;
  }

  // weighted sparse categorical cross-entropy over probabilities.
  // loss = sum_b w[y_b] * (-log max(p[b,y_b], 1e-12)) / sum_b w[y_b]
  Ref weighted_sce(Ref probs, const std::vector<int>& labels, const std::vector<T>& weights) {
    const auto& vp = val(probs);
    require(vp.rank() == 2, Err::ShapeMismatch, "weighted_sce: probs must be [B,K]");
    const std::int64_t b = vp.dim(0), k = vp.dim(1);
    require(static_cast<std::int64_t>(labels.size()) == b, Err::ShapeMismatch,
            "weighted_sce: labels size mismatch");
    require(static_cast<std::int64_t>(weights.size()) == k, Err::ShapeMismatch,
            "weighted_sce: weights size mismatch");
    const T floor_p = T(1e-12);
    T num = T(0), den = T(0);
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const int y = labels[static_cast<std::size_t>(bi)];
      require(y >= 0 && y < k, Err::LabelOutOfRange,
              "label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
      const T w = weights[static_cast<std::size_t>(y)];
      const T p = std::max(vp[bi * k + y], floor_p);
      num += w * (-std::log(p));
      den += w;
    }
    require(den > T(0), Err::ShapeMismatch, "weighted_sce: zero total weight");
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    auto weights_copy = std::make_shared<std::vector<T>>(weights);
    Ref r = add_node("weighted_sce", BasicTensor<T>::scalar(num / den), needs(probs), nullptr);
    if (needs(r)) {
      const T d = den;
      set_back(r, [this, r, probs, labels_copy, weights_copy, b, k, d, floor_p] {
        const T g = grad(r)[0];
        const auto& vp = val(probs);
        auto& gp = grad(probs);
        for (std::int64_t bi = 0; bi < b; ++bi) {
          const int y = (*labels_copy)[static_cast<std::size_t>(bi)];
          const T p = vp[bi * k + y];
          if (p >= floor_p) {
            const T w = (*weights_copy)[static_cast<std::size_t>(y)];
            gp[bi * k + y] += g * (-w / (p * d));
          }
        }
      });
    }
    return r;
  }

  // rate * sum of squares over the given (param) values
  Ref l2_penalty(const std::vector<Ref>& parts, T rate) {
    require(rate >= T(0), Err::NegativeRate, "l2 rate must be >= 0");
    T total = T(0);
    bool any = false;
    for (Ref p : parts) {
      const auto& v = val(p);
      for (const T& x : v.data) total += x * x;
      any = any || needs(p);
    }
    Ref r = add_node("l2_penalty", BasicTensor<T>::scalar(rate * total), any, nullptr);
    if (needs(r)) {
      auto parts_copy = std::make_shared<std::vector<Ref>>(parts);
      set_back(r, [this, r, parts_copy, rate] {
        const T g = grad(r)[0];
        for (Ref p : *parts_copy) {
          if (!needs(p)) continue;
          const auto& v = val(p);
          auto& gp = grad(p);
          for (std::int64_t i = 0; i < v.numel(); ++i) gp[i] += g * T(2) * rate * v[i];
        }
      });
    }
    return r;
  }

  // ---- backward ----

  void backward(Ref loss) {
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    require(ln.value.numel() == 1, Err::NotScalarLoss,
            "backward requires a scalar loss, got " + shape_str(ln.value.shape));
    grad(loss)[0] = T(1);
    for (std::int64_t i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.back) n.back();
    }
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    std::function<void()> back;
    const char* op;
    bool needs_grad;
    ParamT<T>* bound;
  };

  bool needs(Ref r) const { return nodes_[static_cast<std::size_t>(r)].needs_grad; }

  void accumulate(Ref r, const BasicTensor<T>& g) {
    if (!needs(r)) return;
    auto& dst = grad(r);
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }

  Ref add_node(const char* op, BasicTensor<T> value, bool needs_grad, ParamT<T>* bound) {
    for (const T& x : value.data)
      if (!std::isfinite(static_cast<double>(x)))
        raise(Err::NumericError, std::string("op '") + op + "' produced a non-finite value");
    Node n{std::move(value), {}, {}, op, needs_grad, bound};
    if (needs_grad && !bound) n.grad = BasicTensor<T>::zeros(n.value.shape);
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
  }

  void set_back(Ref r, std::function<void()> fn) {
    nodes_[static_cast<std::size_t>(r)].back = std::move(fn);
  }

  // deque: appending nodes must not invalidate references handed out by val()
  std::deque<Node> nodes_;
};

using Tape = TapeT<double>;

}  // namespace mir::engine

#endif  // MIR_ENGINE_TAPE_HPP
