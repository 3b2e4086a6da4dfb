#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "semdepth/error.hpp"
#include "semdepth/shape.hpp"
#include "semdepth/tensor.hpp"

// Differentiable operator set. Every function here records one node on the
// graph its operands belong to; backward closures read saved values through
// the graph rather than capturing copies.

namespace semdepth {

template <class T>
Graph<T>& require_graph(const Tensor<T>& t, const char* op) {
  if (!t.in_graph()) {
    throw ShapeError(std::string(op) + ": tensor is not bound to a graph");
  }
  return *t.graph();
}

template <class T>
Graph<T>& require_same_graph(const Tensor<T>& a, const Tensor<T>& b,
                             const char* op) {
  Graph<T>& g = require_graph(a, op);
  if (b.graph() != &g) {
    throw ShapeError(std::string(op) + ": operands belong to different graphs");
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Graph<T>& g = require_same_graph(a, b, "add");
  require_same_shape(a.shape(), b.shape(), "add");
  auto av = a.values(), bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int ia = a.node(), ib = b.node();
  return g.emplace("add", a.shape(), std::move(out), {ia, ib},
                   [ia, ib](Graph<T>& g, int self) {
                     const auto& go = g.node(self).grad;
                     if (g.wants_grad(ia)) {
                       auto& ga = g.grad_buffer(ia);
                       for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                     }
                     if (g.wants_grad(ib)) {
                       auto& gb = g.grad_buffer(ib);
                       for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
                     }
                   });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Graph<T>& g = require_same_graph(a, b, "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  auto av = a.values(), bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int ia = a.node(), ib = b.node();
  return g.emplace("sub", a.shape(), std::move(out), {ia, ib},
                   [ia, ib](Graph<T>& g, int self) {
                     const auto& go = g.node(self).grad;
                     if (g.wants_grad(ia)) {
                       auto& ga = g.grad_buffer(ia);
                       for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                     }
                     if (g.wants_grad(ib)) {
                       auto& gb = g.grad_buffer(ib);
                       for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                     }
                   });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Graph<T>& g = require_same_graph(a, b, "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  auto av = a.values(), bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int ia = a.node(), ib = b.node();
  return g.emplace("mul", a.shape(), std::move(out), {ia, ib},
                   [ia, ib](Graph<T>& g, int self) {
                     const auto& go = g.node(self).grad;
                     auto av = g.values_of(ia), bv = g.values_of(ib);
                     if (g.wants_grad(ia)) {
                       auto& ga = g.grad_buffer(ia);
                       for (std::size_t i = 0; i < go.size(); ++i)
                         ga[i] += go[i] * bv[i];
                     }
                     if (g.wants_grad(ib)) {
                       auto& gb = g.grad_buffer(ib);
                       for (std::size_t i = 0; i < go.size(); ++i)
                         gb[i] += go[i] * av[i];
                     }
                   });
}

// Plain quotient: the caller is responsible for keeping |b| bounded away from
// zero (the loss code adds an explicit epsilon before dividing).
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  Graph<T>& g = require_same_graph(a, b, "div");
  require_same_shape(a.shape(), b.shape(), "div");
  auto av = a.values(), bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  const int ia = a.node(), ib = b.node();
  return g.emplace("div", a.shape(), std::move(out), {ia, ib},
                   [ia, ib](Graph<T>& g, int self) {
                     const auto& go = g.node(self).grad;
                     auto av = g.values_of(ia), bv = g.values_of(ib);
                     if (g.wants_grad(ia)) {
                       auto& ga = g.grad_buffer(ia);
                       for (std::size_t i = 0; i < go.size(); ++i)
                         ga[i] += go[i] / bv[i];
                     }
                     if (g.wants_grad(ib)) {
                       auto& gb = g.grad_buffer(ib);
                       for (std::size_t i = 0; i < go.size(); ++i)
                         gb[i] -= go[i] * av[i] / (bv[i] * bv[i]);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "neg");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -av[i];
  const int ia = a.node();
  return g.emplace("neg", a.shape(), std::move(out), {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i) ga[i] -= go[i];
                   });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "exp");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  const int ia = a.node();
  return g.emplace("exp", a.shape(), std::move(out), {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto yv = g.values_of(self);
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i)
                       ga[i] += go[i] * yv[i];
                   });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "log");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  const int ia = a.node();
  return g.emplace("log", a.shape(), std::move(out), {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto av = g.values_of(ia);
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i)
                       ga[i] += go[i] / av[i];
                   });
}

// |x| with subgradient 0 at x = 0.
template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "abs");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(av[i]);
  const int ia = a.node();
  return g.emplace("abs", a.shape(), std::move(out), {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto av = g.values_of(ia);
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i) {
                       if (av[i] > T{0}) ga[i] += go[i];
                       else if (av[i] < T{0}) ga[i] -= go[i];
                     }
                   });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "sigmoid");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Split by sign for stability at large |x|.
    const T x = av[i];
    if (x >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T{1} + e);
    }
  }
  const int ia = a.node();
  return g.emplace("sigmoid", a.shape(), std::move(out), {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto yv = g.values_of(self);
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i)
                       ga[i] += go[i] * yv[i] * (T{1} - yv[i]);
                   });
}

// ELU with alpha = 1; subgradient from the linear side at the knee.
template <class T>
Tensor<T> elu(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "elu");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    out[i] = x > T{0} ? x : std::exp(x) - T{1};
  }
  const int ia = a.node();
  return g.emplace("elu", a.shape(), std::move(out), {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto av = g.values_of(ia);
                     auto yv = g.values_of(self);
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i)
                       ga[i] += go[i] * (av[i] > T{0} ? T{1} : yv[i] + T{1});
                   });
}

// Clamp with pass-through gradient strictly inside [lo, hi], zero outside.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  Graph<T>& g = require_graph(a, "clamp");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, av[i]));
  const int ia = a.node();
  return g.emplace("clamp", a.shape(), std::move(out), {ia},
                   [ia, lo, hi](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto av = g.values_of(ia);
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i)
                       if (av[i] > lo && av[i] < hi) ga[i] += go[i];
                   });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Graph<T>& g = require_graph(a, "add_scalar");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  const int ia = a.node();
  return g.emplace("add_scalar", a.shape(), std::move(out), {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                   });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  Graph<T>& g = require_graph(a, "mul_scalar");
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  const int ia = a.node();
  return g.emplace("mul_scalar", a.shape(), std::move(out), {ia},
                   [ia, s](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (std::size_t i = 0; i < go.size(); ++i)
                       ga[i] += go[i] * s;
                   });
}

// ---------------------------------------------------------------------------
// Convolution: same padding, odd kernel, stride 1 or 2, via im2col + GEMM.

namespace detail {

// Unpacks one image (C,H,W) into a (C*k*k) x (Hout*Wout) column matrix,
// zero-filling samples that fall into the padding band.
template <class T>
void im2col(const T* img, int C, int H, int W, int k, int stride, int Hout,
            int Wout, T* cols) {
  const int pad = (k - 1) / 2;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        T* dst = cols + row * (static_cast<std::int64_t>(Hout) * Wout);
        for (int oy = 0; oy < Hout; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wout, T{});
            dst += Wout;
            continue;
          }
          const T* src = img + (static_cast<std::int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wout; ++ox) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (ix < 0 || ix >= W) ? T{} : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column-matrix gradients back onto the image.
template <class T>
void col2im_add(const T* cols, int C, int H, int W, int k, int stride, int Hout,
                int Wout, T* img) {
  const int pad = (k - 1) / 2;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* src = cols + row * (static_cast<std::int64_t>(Hout) * Wout);
        for (int oy = 0; oy < Hout; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            src += Wout;
            continue;
          }
          T* dst = img + (static_cast<std::int64_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wout; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
          src += Wout;
        }
      }
    }
  }
}

template <class T>
using MatRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

// input (N,Cin,H,W), weights (Cout,Cin,k,k), bias (1,Cout,1,1).
// Same padding: output spatial dims = ceil(dim / stride).
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias, int stride) {
  Graph<T>& g = require_same_graph(input, weights, "conv2d");
  require_same_graph(input, bias, "conv2d");
  const Shape in = input.shape(), ws = weights.shape();
  const int k = ws.h;
  if (k != ws.w || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     ws.str());
  }
  if (stride != 1 && stride != 2) {
    throw ShapeError("conv2d: stride must be 1 or 2");
  }
  if (ws.c != in.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(in.c) +
                     " != kernel channels " + std::to_string(ws.c));
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("conv2d: bias shape " + bias.shape().str() +
                     " does not match " + Shape{1, ws.n, 1, 1}.str());
  }
  const int Hout = (in.h + stride - 1) / stride;
  const int Wout = (in.w + stride - 1) / stride;
  const Shape oshape{in.n, ws.n, Hout, Wout};
  const std::int64_t ckk = static_cast<std::int64_t>(in.c) * k * k;
  const std::int64_t hw = static_cast<std::int64_t>(Hout) * Wout;

  std::vector<T> out(static_cast<std::size_t>(oshape.numel()));
  std::vector<T> cols(static_cast<std::size_t>(ckk * hw));
  auto iv = input.values();
  auto wv = weights.values();
  auto bv = bias.values();
  Eigen::Map<const detail::MatRM<T>> wmat(wv.data(), ws.n, ckk);
  for (int n = 0; n < in.n; ++n) {
    detail::im2col(iv.data() + n * in.c * static_cast<std::int64_t>(in.h) * in.w,
                   in.c, in.h, in.w, k, stride, Hout, Wout, cols.data());
    Eigen::Map<const detail::MatRM<T>> cmat(cols.data(), ckk, hw);
    Eigen::Map<detail::MatRM<T>> omat(out.data() + n * ws.n * hw, ws.n, hw);
    omat.noalias() = wmat * cmat;
    for (int oc = 0; oc < ws.n; ++oc) omat.row(oc).array() += bv[oc];
  }

  const int ii = input.node(), iw = weights.node(), ib = bias.node();
  return g.emplace(
      "conv2d", oshape, std::move(out), {ii, iw, ib},
      [ii, iw, ib, in, ws, k, stride, Hout, Wout, ckk, hw](Graph<T>& g,
                                                           int self) {
        const auto& go = g.node(self).grad;
        auto iv = g.values_of(ii);
        auto wv = g.values_of(iw);
        const bool want_in = g.wants_grad(ii);
        const bool want_w = g.wants_grad(iw);
        const bool want_b = g.wants_grad(ib);
        std::vector<T> cols(static_cast<std::size_t>(ckk * hw));
        Eigen::Map<const detail::MatRM<T>> wmat(wv.data(), ws.n, ckk);
        for (int n = 0; n < in.n; ++n) {
          Eigen::Map<const detail::MatRM<T>> gmat(go.data() + n * ws.n * hw,
                                                  ws.n, hw);
          if (want_b) {
            // Scalar left-to-right sum: Eigen's vectorized reduction splits
            // differently depending on buffer alignment, which must not leak
            // into the result (bit-identical retraining is a contract).
            auto& gb = g.grad_buffer(ib);
            for (int oc = 0; oc < ws.n; ++oc) {
              const T* row = go.data() + (static_cast<std::int64_t>(n) * ws.n +
                                          oc) * hw;
              T acc{};
              for (std::int64_t e = 0; e < hw; ++e) acc += row[e];
              gb[oc] += acc;
            }
          }
          if (want_w) {
            detail::im2col(
                iv.data() + n * in.c * static_cast<std::int64_t>(in.h) * in.w,
                in.c, in.h, in.w, k, stride, Hout, Wout, cols.data());
            Eigen::Map<const detail::MatRM<T>> cmat(cols.data(), ckk, hw);
            auto& gw = g.grad_buffer(iw);
            Eigen::Map<detail::MatRM<T>> gwmat(gw.data(), ws.n, ckk);
            gwmat.noalias() += gmat * cmat.transpose();
          }
          if (want_in) {
            Eigen::Map<detail::MatRM<T>> cmat(cols.data(), ckk, hw);
            cmat.noalias() = wmat.transpose() * gmat;
            auto& gi = g.grad_buffer(ii);
            detail::col2im_add(
                cols.data(), in.c, in.h, in.w, k, stride, Hout, Wout,
                gi.data() + n * in.c * static_cast<std::int64_t>(in.h) * in.w);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Upsampling by a fixed factor of 2.

template <class T>
Tensor<T> upsample2x_nearest(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "upsample2x_nearest");
  const Shape in = a.shape();
  const Shape os{in.n, in.c, in.h * 2, in.w * 2};
  auto av = a.values();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < os.h; ++y) {
        const T* src =
            av.data() + ((static_cast<std::int64_t>(n) * in.c + c) * in.h +
                         y / 2) *
                            in.w;
        T* dst = out.data() +
                 ((static_cast<std::int64_t>(n) * in.c + c) * os.h + y) * os.w;
        for (int x = 0; x < os.w; ++x) dst[x] = src[x / 2];
      }
  const int ia = a.node();
  return g.emplace(
      "upsample2x_nearest", os, std::move(out), {ia},
      [ia, in, os](Graph<T>& g, int self) {
        if (!g.wants_grad(ia)) return;
        const auto& go = g.node(self).grad;
        auto& ga = g.grad_buffer(ia);
        for (int n = 0; n < in.n; ++n)
          for (int c = 0; c < in.c; ++c)
            for (int y = 0; y < os.h; ++y) {
              const T* src =
                  go.data() +
                  ((static_cast<std::int64_t>(n) * in.c + c) * os.h + y) * os.w;
              T* dst = ga.data() +
                       ((static_cast<std::int64_t>(n) * in.c + c) * in.h +
                        y / 2) *
                           in.w;
              for (int x = 0; x < os.w; ++x) dst[x / 2] += src[x];
            }
      });
}

// Bilinear, align-corners-false: source coordinate (i + 0.5)/2 - 0.5,
// border-clamped.
template <class T>
Tensor<T> upsample2x_bilinear(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "upsample2x_bilinear");
  const Shape in = a.shape();
  const Shape os{in.n, in.c, in.h * 2, in.w * 2};
  auto av = a.values();

  // Per-axis sample positions are shared by every row/column: precompute the
  // two source indices and weights for each output coordinate.
  std::vector<int> y0(os.h), y1(os.h), x0(os.w), x1(os.w);
  std::vector<T> wy(os.h), wx(os.w);
  auto prepare = [](int out_dim, int in_dim, std::vector<int>& i0,
                    std::vector<int>& i1, std::vector<T>& w1) {
    for (int i = 0; i < out_dim; ++i) {
      const double f = (i + 0.5) / 2.0 - 0.5;
      const double fl = std::floor(f);
      int lo = static_cast<int>(fl);
      T frac = static_cast<T>(f - fl);
      i0[i] = std::clamp(lo, 0, in_dim - 1);
      i1[i] = std::clamp(lo + 1, 0, in_dim - 1);
      w1[i] = frac;
    }
  };
  prepare(os.h, in.h, y0, y1, wy);
  prepare(os.w, in.w, x0, x1, wx);

  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const T* plane =
          av.data() + (static_cast<std::int64_t>(n) * in.c + c) * in.h * in.w;
      T* dst = out.data() +
               (static_cast<std::int64_t>(n) * in.c + c) * os.h * os.w;
      for (int y = 0; y < os.h; ++y) {
        const T* r0 = plane + static_cast<std::int64_t>(y0[y]) * in.w;
        const T* r1 = plane + static_cast<std::int64_t>(y1[y]) * in.w;
        const T b = wy[y];
        for (int x = 0; x < os.w; ++x) {
          const T a0 = r0[x0[x]] + wx[x] * (r0[x1[x]] - r0[x0[x]]);
          const T a1 = r1[x0[x]] + wx[x] * (r1[x1[x]] - r1[x0[x]]);
          *dst++ = a0 + b * (a1 - a0);
        }
      }
    }

  const int ia = a.node();
  return g.emplace(
      "upsample2x_bilinear", os, std::move(out), {ia},
      [ia, in, os, y0, y1, x0, x1, wy, wx](Graph<T>& g, int self) {
        if (!g.wants_grad(ia)) return;
        const auto& go = g.node(self).grad;
        auto& ga = g.grad_buffer(ia);
        for (int n = 0; n < in.n; ++n)
          for (int c = 0; c < in.c; ++c) {
            T* plane = ga.data() +
                       (static_cast<std::int64_t>(n) * in.c + c) * in.h * in.w;
            const T* src = go.data() +
                           (static_cast<std::int64_t>(n) * in.c + c) * os.h *
                               os.w;
            for (int y = 0; y < os.h; ++y) {
              T* r0 = plane + static_cast<std::int64_t>(y0[y]) * in.w;
              T* r1 = plane + static_cast<std::int64_t>(y1[y]) * in.w;
              const T b = wy[y];
              for (int x = 0; x < os.w; ++x) {
                const T gv = *src++;
                const T w11 = wx[x] * b, w01 = (T{1} - wx[x]) * b;
                const T w10 = wx[x] * (T{1} - b), w00 = (T{1} - wx[x]) * (T{1} - b);
                r0[x0[x]] += gv * w00;
                r0[x1[x]] += gv * w10;
                r1[x0[x]] += gv * w01;
                r1[x1[x]] += gv * w11;
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Valid average pooling (stride 1), the statistics engine behind SSIM.

template <class T>
Tensor<T> avg_pool_valid(const Tensor<T>& a, int window) {
  Graph<T>& g = require_graph(a, "avg_pool_valid");
  const Shape in = a.shape();
  if (window < 1 || window > in.h || window > in.w) {
    throw ShapeError("avg_pool_valid: window " + std::to_string(window) +
                     " does not fit in " + in.str());
  }
  const Shape os{in.n, in.c, in.h - window + 1, in.w - window + 1};
  const T inv = T{1} / static_cast<T>(window * window);
  auto av = a.values();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const T* plane =
          av.data() + (static_cast<std::int64_t>(n) * in.c + c) * in.h * in.w;
      T* dst = out.data() +
               (static_cast<std::int64_t>(n) * in.c + c) * os.h * os.w;
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x) {
          T acc{};
          for (int ky = 0; ky < window; ++ky) {
            const T* row = plane + static_cast<std::int64_t>(y + ky) * in.w + x;
            for (int kx = 0; kx < window; ++kx) acc += row[kx];
          }
          *dst++ = acc * inv;
        }
    }
  const int ia = a.node();
  return g.emplace(
      "avg_pool_valid", os, std::move(out), {ia},
      [ia, in, os, window, inv](Graph<T>& g, int self) {
        if (!g.wants_grad(ia)) return;
        const auto& go = g.node(self).grad;
        auto& ga = g.grad_buffer(ia);
        for (int n = 0; n < in.n; ++n)
          for (int c = 0; c < in.c; ++c) {
            T* plane = ga.data() +
                       (static_cast<std::int64_t>(n) * in.c + c) * in.h * in.w;
            const T* src = go.data() +
                           (static_cast<std::int64_t>(n) * in.c + c) * os.h *
                               os.w;
            for (int y = 0; y < os.h; ++y)
              for (int x = 0; x < os.w; ++x) {
                const T gv = *src++ * inv;
                for (int ky = 0; ky < window; ++ky) {
                  T* row = plane + static_cast<std::int64_t>(y + ky) * in.w + x;
                  for (int kx = 0; kx < window; ++kx) row[kx] += gv;
                }
              }
          }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "reduce_sum");
  if (a.numel() == 0) throw ShapeError("reduce_sum: empty tensor");
  auto av = a.values();
  T acc{};
  for (T v : av) acc += v;
  const int ia = a.node();
  return g.emplace("reduce_sum", Shape{1, 1, 1, 1}, {acc}, {ia},
                   [ia](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const T gv = g.node(self).grad[0];
                     auto& ga = g.grad_buffer(ia);
                     for (auto& v : ga) v += gv;
                   });
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "reduce_mean");
  if (a.numel() == 0) throw ShapeError("reduce_mean: empty tensor");
  auto av = a.values();
  T acc{};
  for (T v : av) acc += v;
  const T inv = T{1} / static_cast<T>(a.numel());
  const int ia = a.node();
  return g.emplace("reduce_mean", Shape{1, 1, 1, 1}, {acc * inv}, {ia},
                   [ia, inv](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const T gv = g.node(self).grad[0] * inv;
                     auto& ga = g.grad_buffer(ia);
                     for (auto& v : ga) v += gv;
                   });
}

// Mean over the spatial axes only -> (N, C, 1, 1).
template <class T>
Tensor<T> reduce_mean_spatial(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "reduce_mean_spatial");
  const Shape in = a.shape();
  if (in.spatial() == 0) throw ShapeError("reduce_mean_spatial: empty plane");
  const T inv = T{1} / static_cast<T>(in.spatial());
  auto av = a.values();
  std::vector<T> out(static_cast<std::size_t>(in.n) * in.c);
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const T* plane =
          av.data() + (static_cast<std::int64_t>(n) * in.c + c) * in.spatial();
      T acc{};
      for (std::int64_t i = 0; i < in.spatial(); ++i) acc += plane[i];
      out[static_cast<std::size_t>(n) * in.c + c] = acc * inv;
    }
  const int ia = a.node();
  return g.emplace("reduce_mean_spatial", Shape{in.n, in.c, 1, 1},
                   std::move(out), {ia}, [ia, in, inv](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (int n = 0; n < in.n; ++n)
                       for (int c = 0; c < in.c; ++c) {
                         const T gv =
                             go[static_cast<std::size_t>(n) * in.c + c] * inv;
                         T* plane =
                             ga.data() +
                             (static_cast<std::int64_t>(n) * in.c + c) *
                                 in.spatial();
                         for (std::int64_t i = 0; i < in.spatial(); ++i)
                           plane[i] += gv;
                       }
                   });
}

// ---------------------------------------------------------------------------
// Channel and spatial slicing / joining

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Graph<T>& g = require_same_graph(a, b, "concat_channels");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
  auto av = a.values(), bv = b.values();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  const std::int64_t plane = sa.spatial();
  for (int n = 0; n < sa.n; ++n) {
    std::copy(av.data() + n * sa.c * plane, av.data() + (n + 1) * sa.c * plane,
              out.data() + static_cast<std::int64_t>(n) * os.c * plane);
    std::copy(bv.data() + n * sb.c * plane, bv.data() + (n + 1) * sb.c * plane,
              out.data() + (static_cast<std::int64_t>(n) * os.c + sa.c) * plane);
  }
  const int ia = a.node(), ib = b.node();
  return g.emplace(
      "concat_channels", os, std::move(out), {ia, ib},
      [ia, ib, sa, sb, os, plane](Graph<T>& g, int self) {
        const auto& go = g.node(self).grad;
        if (g.wants_grad(ia)) {
          auto& ga = g.grad_buffer(ia);
          for (int n = 0; n < sa.n; ++n) {
            const T* src = go.data() + static_cast<std::int64_t>(n) * os.c * plane;
            T* dst = ga.data() + static_cast<std::int64_t>(n) * sa.c * plane;
            for (std::int64_t i = 0; i < sa.c * plane; ++i) dst[i] += src[i];
          }
        }
        if (g.wants_grad(ib)) {
          auto& gb = g.grad_buffer(ib);
          for (int n = 0; n < sb.n; ++n) {
            const T* src =
                go.data() + (static_cast<std::int64_t>(n) * os.c + sa.c) * plane;
            T* dst = gb.data() + static_cast<std::int64_t>(n) * sb.c * plane;
            for (std::int64_t i = 0; i < sb.c * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

// Channels [c0, c1) of the input.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, int c0, int c1) {
  Graph<T>& g = require_graph(a, "slice_channels");
  const Shape in = a.shape();
  if (c0 < 0 || c1 > in.c || c0 >= c1) {
    throw ShapeError("slice_channels: [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") out of range for " + in.str());
  }
  const Shape os{in.n, c1 - c0, in.h, in.w};
  const std::int64_t plane = in.spatial();
  auto av = a.values();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  for (int n = 0; n < in.n; ++n)
    std::copy(av.data() + (static_cast<std::int64_t>(n) * in.c + c0) * plane,
              av.data() + (static_cast<std::int64_t>(n) * in.c + c1) * plane,
              out.data() + static_cast<std::int64_t>(n) * os.c * plane);
  const int ia = a.node();
  return g.emplace("slice_channels", os, std::move(out), {ia},
                   [ia, in, os, c0, plane](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (int n = 0; n < in.n; ++n) {
                       const T* src =
                           go.data() + static_cast<std::int64_t>(n) * os.c * plane;
                       T* dst = ga.data() +
                                (static_cast<std::int64_t>(n) * in.c + c0) *
                                    plane;
                       for (std::int64_t i = 0; i < os.c * plane; ++i)
                         dst[i] += src[i];
                     }
                   });
}

// Columns [x0, x1) of every row.
template <class T>
Tensor<T> slice_x(const Tensor<T>& a, int x0, int x1) {
  Graph<T>& g = require_graph(a, "slice_x");
  const Shape in = a.shape();
  if (x0 < 0 || x1 > in.w || x0 >= x1) {
    throw ShapeError("slice_x: [" + std::to_string(x0) + ", " +
                     std::to_string(x1) + ") out of range for " + in.str());
  }
  const Shape os{in.n, in.c, in.h, x1 - x0};
  auto av = a.values();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  const std::int64_t rows = static_cast<std::int64_t>(in.n) * in.c * in.h;
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy(av.data() + r * in.w + x0, av.data() + r * in.w + x1,
              out.data() + r * os.w);
  const int ia = a.node();
  return g.emplace("slice_x", os, std::move(out), {ia},
                   [ia, in, os, x0, rows](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (std::int64_t r = 0; r < rows; ++r) {
                       const T* src = go.data() + r * os.w;
                       T* dst = ga.data() + r * in.w + x0;
                       for (int i = 0; i < os.w; ++i) dst[i] += src[i];
                     }
                   });
}

// Rows [y0, y1) of every plane.
template <class T>
Tensor<T> slice_y(const Tensor<T>& a, int y0, int y1) {
  Graph<T>& g = require_graph(a, "slice_y");
  const Shape in = a.shape();
  if (y0 < 0 || y1 > in.h || y0 >= y1) {
    throw ShapeError("slice_y: [" + std::to_string(y0) + ", " +
                     std::to_string(y1) + ") out of range for " + in.str());
  }
  const Shape os{in.n, in.c, y1 - y0, in.w};
  auto av = a.values();
  std::vector<T> out(static_cast<std::size_t>(os.numel()));
  const std::int64_t planes = static_cast<std::int64_t>(in.n) * in.c;
  for (std::int64_t p = 0; p < planes; ++p)
    std::copy(av.data() + (p * in.h + y0) * in.w,
              av.data() + (p * in.h + y1) * in.w,
              out.data() + p * os.h * os.w);
  const int ia = a.node();
  return g.emplace("slice_y", os, std::move(out), {ia},
                   [ia, in, os, y0, planes](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (std::int64_t p = 0; p < planes; ++p) {
                       const T* src = go.data() + p * os.h * os.w;
                       T* dst = ga.data() + (p * in.h + y0) * in.w;
                       for (std::int64_t i = 0; i < os.h * static_cast<std::int64_t>(os.w); ++i)
                         dst[i] += src[i];
                     }
                   });
}

// Mean across channels -> (N, 1, H, W); used to pool per-channel image
// gradients into a single edge-strength map.
template <class T>
Tensor<T> mean_channels(const Tensor<T>& a) {
  Graph<T>& g = require_graph(a, "mean_channels");
  const Shape in = a.shape();
  const Shape os{in.n, 1, in.h, in.w};
  const T inv = T{1} / static_cast<T>(in.c);
  const std::int64_t plane = in.spatial();
  auto av = a.values();
  std::vector<T> out(static_cast<std::size_t>(os.numel()), T{});
  for (int n = 0; n < in.n; ++n) {
    T* dst = out.data() + static_cast<std::int64_t>(n) * plane;
    for (int c = 0; c < in.c; ++c) {
      const T* src = av.data() + (static_cast<std::int64_t>(n) * in.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i] * inv;
    }
  }
  const int ia = a.node();
  return g.emplace("mean_channels", os, std::move(out), {ia},
                   [ia, in, inv, plane](Graph<T>& g, int self) {
                     if (!g.wants_grad(ia)) return;
                     const auto& go = g.node(self).grad;
                     auto& ga = g.grad_buffer(ia);
                     for (int n = 0; n < in.n; ++n) {
                       const T* src = go.data() + static_cast<std::int64_t>(n) * plane;
                       for (int c = 0; c < in.c; ++c) {
                         T* dst = ga.data() +
                                  (static_cast<std::int64_t>(n) * in.c + c) *
                                      plane;
                         for (std::int64_t i = 0; i < plane; ++i)
                           dst[i] += src[i] * inv;
                       }
                     }
                   });
}

}  // namespace semdepth
