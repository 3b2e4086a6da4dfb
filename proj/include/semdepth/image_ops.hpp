#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "semdepth/error.hpp"
#include "semdepth/ops.hpp"
#include "semdepth/tensor.hpp"

// Image-domain differentiable operators: horizontal bilinear warping, SSIM,
// and forward-difference spatial gradients, plus a few plain (non-recorded)
// raster helpers for pyramids and flips.

namespace semdepth {

// Positive disparity always points along the epipolar shift between the two
// views: reconstructing the left image samples the right image d pixels to
// the left, and vice versa.
enum class WarpDirection { kLeftFromRight, kRightFromLeft };

enum class Axis { kX, kY };

struct SsimConfig {
  int window = 3;
  double c1 = 1e-4;  // (0.01)^2
  double c2 = 9e-4;  // (0.03)^2
};

// Samples `source` along rows at x' = j - d (left-from-right) or x' = j + d
// (right-from-left), linear interpolation, border clamp. Differentiable in
// both source and disparity; where both interpolation taps clamp to the same
// border pixel the disparity gradient is zero.
template <class T>
Tensor<T> warp_horizontal(const Tensor<T>& source, const Tensor<T>& disparity,
                          WarpDirection dir) {
  Graph<T>& g = require_same_graph(source, disparity, "warp_horizontal");
  const Shape ss = source.shape(), ds = disparity.shape();
  if (ds.c != 1 || ss.n != ds.n || ss.h != ds.h || ss.w != ds.w) {
    throw ShapeError("warp_horizontal: source " + ss.str() +
                     " vs disparity " + ds.str());
  }
  const T sign = dir == WarpDirection::kLeftFromRight ? T{-1} : T{1};
  auto sv = source.values();
  auto dv = disparity.values();
  std::vector<T> out(sv.size());
  for (int n = 0; n < ss.n; ++n)
    for (int y = 0; y < ss.h; ++y) {
      const T* drow = dv.data() + (static_cast<std::int64_t>(n) * ds.h + y) * ds.w;
      for (int c = 0; c < ss.c; ++c) {
        const T* srow =
            sv.data() +
            ((static_cast<std::int64_t>(n) * ss.c + c) * ss.h + y) * ss.w;
        T* orow = out.data() +
                  ((static_cast<std::int64_t>(n) * ss.c + c) * ss.h + y) * ss.w;
        for (int x = 0; x < ss.w; ++x) {
          const T sx = static_cast<T>(x) + sign * drow[x];
          const T fl = std::floor(sx);
          const int x0 = static_cast<int>(fl);
          const T w = sx - fl;
          const int x0c = std::clamp(x0, 0, ss.w - 1);
          const int x1c = std::clamp(x0 + 1, 0, ss.w - 1);
          orow[x] = srow[x0c] + w * (srow[x1c] - srow[x0c]);
        }
      }
    }
  const int is = source.node(), id = disparity.node();
  return g.emplace(
      "warp_horizontal", ss, std::move(out), {is, id},
      [is, id, ss, ds, sign](Graph<T>& g, int self) {
        const auto& go = g.node(self).grad;
        auto sv = g.values_of(is);
        auto dv = g.values_of(id);
        const bool want_src = g.wants_grad(is);
        const bool want_disp = g.wants_grad(id);
        if (!want_src && !want_disp) return;
        auto* gs = want_src ? &g.grad_buffer(is) : nullptr;
        auto* gd = want_disp ? &g.grad_buffer(id) : nullptr;
        for (int n = 0; n < ss.n; ++n)
          for (int y = 0; y < ss.h; ++y) {
            const T* drow =
                dv.data() + (static_cast<std::int64_t>(n) * ds.h + y) * ds.w;
            T* gdrow = gd ? gd->data() +
                                (static_cast<std::int64_t>(n) * ds.h + y) * ds.w
                          : nullptr;
            for (int c = 0; c < ss.c; ++c) {
              const std::int64_t roff =
                  ((static_cast<std::int64_t>(n) * ss.c + c) * ss.h + y) * ss.w;
              const T* srow = sv.data() + roff;
              const T* gorow = go.data() + roff;
              T* gsrow = gs ? gs->data() + roff : nullptr;
              for (int x = 0; x < ss.w; ++x) {
                const T sx = static_cast<T>(x) + sign * drow[x];
                const T fl = std::floor(sx);
                const int x0 = static_cast<int>(fl);
                const T w = sx - fl;
                const int x0c = std::clamp(x0, 0, ss.w - 1);
                const int x1c = std::clamp(x0 + 1, 0, ss.w - 1);
                const T gv = gorow[x];
                if (gsrow) {
                  gsrow[x0c] += gv * (T{1} - w);
                  gsrow[x1c] += gv * w;
                }
                if (gdrow) gdrow[x] += gv * sign * (srow[x1c] - srow[x0c]);
              }
            }
          }
      });
}

// Per-pixel SSIM map over the valid pooling region, built from average-pool
// statistics so the backward pass comes from the op set for free.
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg) {
  require_same_graph(a, b, "ssim");
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (cfg.window > a.shape().h || cfg.window > a.shape().w) {
    throw ShapeError("ssim: window larger than image " + a.shape().str());
  }
  const T c1 = static_cast<T>(cfg.c1), c2 = static_cast<T>(cfg.c2);
  Tensor<T> mu_a = avg_pool_valid(a, cfg.window);
  Tensor<T> mu_b = avg_pool_valid(b, cfg.window);
  Tensor<T> mu_aa = mul(mu_a, mu_a);
  Tensor<T> mu_bb = mul(mu_b, mu_b);
  Tensor<T> mu_ab = mul(mu_a, mu_b);
  Tensor<T> var_a = sub(avg_pool_valid(mul(a, a), cfg.window), mu_aa);
  Tensor<T> var_b = sub(avg_pool_valid(mul(b, b), cfg.window), mu_bb);
  Tensor<T> cov = sub(avg_pool_valid(mul(a, b), cfg.window), mu_ab);
  Tensor<T> num = mul(add_scalar(mul_scalar(mu_ab, T{2}), c1),
                      add_scalar(mul_scalar(cov, T{2}), c2));
  Tensor<T> den = mul(add_scalar(add(mu_aa, mu_bb), c1),
                      add_scalar(add(var_a, var_b), c2));
  return clamp(div(num, den), T{-1}, T{1});
}

// Forward difference along x or y; output shrinks by one along that axis.
template <class T>
Tensor<T> spatial_gradient(const Tensor<T>& a, Axis axis) {
  require_graph(a, "spatial_gradient");
  const Shape in = a.shape();
  if (axis == Axis::kX) {
    if (in.w < 2) throw ShapeError("spatial_gradient: width < 2 in " + in.str());
    return sub(slice_x(a, 1, in.w), slice_x(a, 0, in.w - 1));
  }
  if (in.h < 2) throw ShapeError("spatial_gradient: height < 2 in " + in.str());
  return sub(slice_y(a, 1, in.h), slice_y(a, 0, in.h - 1));
}

// ---------------------------------------------------------------------------
// Plain raster helpers (no graph, no gradients)

// 2x2 average pooling with stride 2; used to build the image pyramid the
// multi-scale losses compare against. Requires even spatial dims.
template <class T>
Tensor<T> downsample2x_avg(const Tensor<T>& a) {
  const Shape in = a.shape();
  if (in.h % 2 != 0 || in.w % 2 != 0) {
    throw ShapeError("downsample2x_avg: odd spatial dims in " + in.str());
  }
  const Shape os{in.n, in.c, in.h / 2, in.w / 2};
  Tensor<T> out(os);
  auto av = a.values();
  auto ov = out.values();
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const T* plane =
          av.data() + (static_cast<std::int64_t>(n) * in.c + c) * in.spatial();
      T* dst = ov.data() +
               (static_cast<std::int64_t>(n) * os.c + c) * os.spatial();
      for (int y = 0; y < os.h; ++y) {
        const T* r0 = plane + static_cast<std::int64_t>(2 * y) * in.w;
        const T* r1 = r0 + in.w;
        for (int x = 0; x < os.w; ++x) {
          *dst++ = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) *
                   static_cast<T>(0.25);
        }
      }
    }
  return out;
}

// Mirror about the vertical axis: out(i, j) = in(i, W-1-j).
template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& a) {
  const Shape in = a.shape();
  Tensor<T> out(in);
  auto av = a.values();
  auto ov = out.values();
  const std::int64_t rows = static_cast<std::int64_t>(in.n) * in.c * in.h;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = av.data() + r * in.w;
    T* dst = ov.data() + r * in.w;
    for (int x = 0; x < in.w; ++x) dst[x] = src[in.w - 1 - x];
  }
  return out;
}

}  // namespace semdepth
