#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "semdepth/error.hpp"
#include "semdepth/image_ops.hpp"
#include "semdepth/ops.hpp"
#include "semdepth/tensor.hpp"

// The training objective: appearance + smoothness + left-right consistency
// over a 4-scale disparity pyramid, plus full-resolution cross-entropy on
// semantics and the cross-domain discontinuity term tying the two together.

namespace semdepth {

// Ablation configurations: depth-only, depth+semantics, all three terms, and
// depth+cdd without the semantic head loss.
enum class LossMode { kD, kDS, kDSCdd, kDCdd };

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::kD: return "d";
    case LossMode::kDS: return "d+s";
    case LossMode::kDSCdd: return "d+s+cdd";
    case LossMode::kDCdd: return "d+cdd";
  }
  return "?";
}

inline std::optional<LossMode> parse_loss_mode(const std::string& s) {
  if (s == "d") return LossMode::kD;
  if (s == "d+s") return LossMode::kDS;
  if (s == "d+s+cdd") return LossMode::kDSCdd;
  if (s == "d+cdd") return LossMode::kDCdd;
  return std::nullopt;
}

inline bool mode_uses_semantic(LossMode m) {
  return m == LossMode::kDS || m == LossMode::kDSCdd;
}
inline bool mode_uses_cdd(LossMode m) {
  return m == LossMode::kDSCdd || m == LossMode::kDCdd;
}

struct LossWeights {
  double alpha_d = 1.0;
  double alpha_s = 0.1;
  double alpha_cdd = 0.1;
  double beta_ap = 1.0;
  double beta_ds_base = 1.0;  // per-scale weight = base / downsampling factor
  double beta_lr = 1.0;
  double gamma = 0.85;
};

// Hard per-pixel class labels; 255 marks pixels excluded from supervision.
struct SemanticTarget {
  static constexpr int kIgnore = 255;
  int n = 1, h = 0, w = 0;
  int num_classes = 0;
  std::vector<int> labels;  // (n*h*w) row-major

  int at(int in, int iy, int ix) const {
    return labels[(static_cast<std::size_t>(in) * h + iy) * w + ix];
  }
};

struct LossReport {
  // Per-scale terms as they enter the weighted sum; ds/lr rows are the
  // width-normalized values (see depth_loss).
  struct ScaleTerms {
    double ap_l = 0, ap_r = 0, ds_l = 0, ds_r = 0, lr_l = 0, lr_r = 0;
  };
  double total = 0, depth = 0, semantic = 0, cdd = 0;  // unweighted components
  std::vector<ScaleTerms> scales;
};

// gamma * mean((1 - SSIM)/2) + (1 - gamma) * mean|I - I_warped|; the two
// terms are averaged over their own domains (SSIM's valid region is smaller).
template <class T>
Tensor<T> appearance_loss(const Tensor<T>& image, const Tensor<T>& warped,
                          T gamma, const SsimConfig& cfg = {}) {
  require_same_shape(image.shape(), warped.shape(), "appearance_loss");
  Tensor<T> l1 = reduce_mean(abs(sub(image, warped)));
  Tensor<T> s = reduce_mean(ssim(image, warped, cfg));
  Tensor<T> dssim = mul_scalar(add_scalar(neg(s), T{1}), static_cast<T>(0.5));
  return add(mul_scalar(dssim, gamma), mul_scalar(l1, T{1} - gamma));
}

// Edge-aware smoothness: |grad d| weighted by exp(-mean-channel |grad I|),
// forward differences, normalized by the combined count of x and y positions.
template <class T>
Tensor<T> smoothness_loss(const Tensor<T>& d, const Tensor<T>& image) {
  const Shape ds = d.shape(), is = image.shape();
  if (ds.n != is.n || ds.h != is.h || ds.w != is.w) {
    throw ShapeError("smoothness_loss: disparity " + ds.str() + " vs image " +
                     is.str());
  }
  Tensor<T> tx = mul(abs(spatial_gradient(d, Axis::kX)),
                     exp(neg(mean_channels(abs(spatial_gradient(image, Axis::kX))))));
  Tensor<T> ty = mul(abs(spatial_gradient(d, Axis::kY)),
                     exp(neg(mean_channels(abs(spatial_gradient(image, Axis::kY))))));
  const T inv_n = T{1} / static_cast<T>(tx.numel() + ty.numel());
  return mul_scalar(add(reduce_sum(tx), reduce_sum(ty)), inv_n);
}

// mean |a(i,j) - b(i, j + a(i,j))| for the left form (dir right-from-left);
// the right-view counterpart mirrors the sampling sign.
template <class T>
Tensor<T> lr_consistency_loss(const Tensor<T>& d_a, const Tensor<T>& d_b,
                              WarpDirection dir = WarpDirection::kRightFromLeft) {
  require_same_shape(d_a.shape(), d_b.shape(), "lr_consistency_loss");
  Tensor<T> sampled = warp_horizontal(d_b, d_a, dir);
  return reduce_mean(abs(sub(d_a, sampled)));
}

// One pyramid level: predicted pair plus the image pair at that resolution.
template <class T>
struct ScaleInputs {
  Tensor<T> d_l, d_r;      // (n,1,h,w)
  Tensor<T> img_l, img_r;  // (n,3,h,w), bound as non-trainable leaves
};

// Sum over scales of beta_ap (ap_l + ap_r) + beta_ds(s) (ds_l + ds_r)
// + beta_lr (lr_l + lr_r). Disparity tensors carry pixel units (that is what
// the warp needs), but the smoothness and consistency penalties are defined
// on width-normalized disparity — with unit weights, pixel-unit penalties
// would dwarf the appearance term ~W-fold and the optimum would be a flat
// map. The 1/W factor is folded into the reported ds/lr terms.
template <class T>
Tensor<T> depth_loss(const std::vector<ScaleInputs<T>>& scales,
                     const LossWeights& w, LossReport* report = nullptr) {
  if (scales.empty()) throw ShapeError("depth_loss: no scales");
  Tensor<T> acc;
  if (report) report->scales.assign(scales.size(), {});
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const ScaleInputs<T>& sc = scales[s];
    const Shape dsh = sc.d_l.shape(), ish = sc.img_l.shape();
    if (dsh.h != ish.h || dsh.w != ish.w) {
      throw ShapeError("depth_loss: scale " + std::to_string(s) +
                       " disparity " + dsh.str() + " vs image " + ish.str());
    }
    Tensor<T> warped_l =
        warp_horizontal(sc.img_r, sc.d_l, WarpDirection::kLeftFromRight);
    Tensor<T> warped_r =
        warp_horizontal(sc.img_l, sc.d_r, WarpDirection::kRightFromLeft);
    Tensor<T> ap_l = appearance_loss(sc.img_l, warped_l, static_cast<T>(w.gamma));
    Tensor<T> ap_r = appearance_loss(sc.img_r, warped_r, static_cast<T>(w.gamma));
    const T inv_w = T{1} / static_cast<T>(ish.w);
    Tensor<T> ds_l = mul_scalar(smoothness_loss(sc.d_l, sc.img_l), inv_w);
    Tensor<T> ds_r = mul_scalar(smoothness_loss(sc.d_r, sc.img_r), inv_w);
    Tensor<T> lr_l = mul_scalar(
        lr_consistency_loss(sc.d_l, sc.d_r, WarpDirection::kRightFromLeft),
        inv_w);
    Tensor<T> lr_r = mul_scalar(
        lr_consistency_loss(sc.d_r, sc.d_l, WarpDirection::kLeftFromRight),
        inv_w);
    if (report) {
      auto& row = report->scales[s];
      row.ap_l = static_cast<double>(ap_l.item());
      row.ap_r = static_cast<double>(ap_r.item());
      row.ds_l = static_cast<double>(ds_l.item());
      row.ds_r = static_cast<double>(ds_r.item());
      row.lr_l = static_cast<double>(lr_l.item());
      row.lr_r = static_cast<double>(lr_r.item());
    }
    const T beta_ds =
        static_cast<T>(w.beta_ds_base / static_cast<double>(std::int64_t{1} << s));
    Tensor<T> term = add(
        add(mul_scalar(add(ap_l, ap_r), static_cast<T>(w.beta_ap)),
            mul_scalar(add(ds_l, ds_r), beta_ds)),
        mul_scalar(add(lr_l, lr_r), static_cast<T>(w.beta_lr)));
    acc = s == 0 ? term : add(acc, term);
  }
  return acc;
}

// Pixel-wise softmax cross-entropy with an ignore label, averaged over the
// supervised pixels; fused into a single node (stable log-sum-exp forward,
// softmax-minus-onehot backward).
template <class T>
Tensor<T> semantic_loss(const Tensor<T>& logits, const SemanticTarget& target) {
  Graph<T>& g = require_graph(logits, "semantic_loss");
  const Shape ls = logits.shape();
  if (ls.n != target.n || ls.c != target.num_classes || ls.h != target.h ||
      ls.w != target.w) {
    throw ShapeError("semantic_loss: logits " + ls.str() +
                     " vs target (n=" + std::to_string(target.n) +
                     ", C=" + std::to_string(target.num_classes) +
                     ", h=" + std::to_string(target.h) +
                     ", w=" + std::to_string(target.w) + ")");
  }
  const std::int64_t hw = static_cast<std::int64_t>(ls.h) * ls.w;
  auto lv = logits.values();
  T acc{};
  std::int64_t count = 0;
  for (int n = 0; n < ls.n; ++n)
    for (int y = 0; y < ls.h; ++y)
      for (int x = 0; x < ls.w; ++x) {
        const int label = target.at(n, y, x);
        if (label == SemanticTarget::kIgnore) continue;
        if (label < 0 || label >= ls.c) {
          throw DataError("semantic_loss: label " + std::to_string(label) +
                          " outside [0, " + std::to_string(ls.c) + ")");
        }
        const T* px = lv.data() + (static_cast<std::int64_t>(n) * ls.c * ls.h +
                                   y) * ls.w + x;
        T m = px[0];
        for (int c = 1; c < ls.c; ++c) m = std::max(m, px[c * hw]);
        T sumexp{};
        for (int c = 0; c < ls.c; ++c) sumexp += std::exp(px[c * hw] - m);
        acc += m + std::log(sumexp) - px[static_cast<std::int64_t>(label) * hw];
        ++count;
      }
  if (count == 0) {
    throw DataError("semantic_loss: all pixels carry the ignore label");
  }
  const T inv = T{1} / static_cast<T>(count);
  const int il = logits.node();
  // The closure keeps its own copy of the labels; targets are tiny next to
  // the activations already held by the graph.
  return g.emplace(
      "semantic_loss", Shape{1, 1, 1, 1}, {acc * inv}, {il},
      [il, ls, hw, inv, labels = target.labels](Graph<T>& g, int self) {
        if (!g.wants_grad(il)) return;
        const T up = g.node(self).grad[0] * inv;
        auto lv = g.values_of(il);
        auto& gl = g.grad_buffer(il);
        for (int n = 0; n < ls.n; ++n)
          for (int y = 0; y < ls.h; ++y)
            for (int x = 0; x < ls.w; ++x) {
              const int label =
                  labels[(static_cast<std::size_t>(n) * ls.h + y) * ls.w + x];
              if (label == SemanticTarget::kIgnore) continue;
              const std::int64_t off =
                  (static_cast<std::int64_t>(n) * ls.c * ls.h + y) * ls.w + x;
              const T* px = lv.data() + off;
              T* gpx = gl.data() + off;
              T m = px[0];
              for (int c = 1; c < ls.c; ++c) m = std::max(m, px[c * hw]);
              T sumexp{};
              for (int c = 0; c < ls.c; ++c) sumexp += std::exp(px[c * hw] - m);
              const T invsum = T{1} / sumexp;
              for (int c = 0; c < ls.c; ++c) {
                T p = std::exp(px[c * hw] - m) * invsum;
                if (c == label) p -= T{1};
                gpx[c * hw] += up * p;
              }
            }
      });
}

// Cross-domain discontinuity: at label boundaries, penalize small relative
// disparity jumps via exp(-|delta d / d|); the boundary indicator comes from
// hard labels and never receives gradient. N counts label pairs where both
// ends are supervised; ignore-adjacent pairs drop out entirely.
template <class T>
Tensor<T> cdd_loss(const Tensor<T>& d, const SemanticTarget& target,
                   T eps = static_cast<T>(1e-7)) {
  Graph<T>& g = require_graph(d, "cdd_loss");
  const Shape ds = d.shape();
  if (ds.c != 1 || ds.n != target.n || ds.h != target.h || ds.w != target.w) {
    throw ShapeError("cdd_loss: disparity " + ds.str() + " vs target (n=" +
                     std::to_string(target.n) + ", h=" +
                     std::to_string(target.h) + ", w=" +
                     std::to_string(target.w) + ")");
  }
  const T huge = std::numeric_limits<T>::max();
  std::int64_t valid = 0;

  auto boundary_mask = [&](Axis axis) {
    const int mh = axis == Axis::kX ? ds.h : ds.h - 1;
    const int mw = axis == Axis::kX ? ds.w - 1 : ds.w;
    Tensor<T> mask(Shape{ds.n, 1, mh, mw});
    auto mv = mask.values();
    for (int n = 0; n < ds.n; ++n)
      for (int y = 0; y < mh; ++y)
        for (int x = 0; x < mw; ++x) {
          const int a = target.at(n, y, x);
          const int b = axis == Axis::kX ? target.at(n, y, x + 1)
                                         : target.at(n, y + 1, x);
          if (a == SemanticTarget::kIgnore || b == SemanticTarget::kIgnore)
            continue;
          ++valid;
          if (a != b)
            mv[(static_cast<std::size_t>(n) * mh + y) * mw + x] = T{1};
        }
    return mask;
  };

  Tensor<T> mask_x = g.leaf(boundary_mask(Axis::kX));
  Tensor<T> mask_y = g.leaf(boundary_mask(Axis::kY));
  if (valid == 0) return g.constant(Shape{1, 1, 1, 1}, T{});

  // Relative jump normalized by the left/top element of each pair, floored
  // at eps so near-zero disparities cannot blow the quotient up.
  Tensor<T> rel_x = div(spatial_gradient(d, Axis::kX),
                        clamp(slice_x(d, 0, ds.w - 1), eps, huge));
  Tensor<T> rel_y = div(spatial_gradient(d, Axis::kY),
                        clamp(slice_y(d, 0, ds.h - 1), eps, huge));
  Tensor<T> sum = add(reduce_sum(mul(exp(neg(abs(rel_x))), mask_x)),
                      reduce_sum(mul(exp(neg(abs(rel_y))), mask_y)));
  return mul_scalar(sum, T{1} / static_cast<T>(valid));
}

// Everything the composite objective needs from one sample's forward pass.
template <class T>
struct TotalLossInputs {
  std::vector<ScaleInputs<T>> scales;
  const Tensor<T>* sem_logits = nullptr;       // full resolution, or null
  const SemanticTarget* sem_target = nullptr;  // null when unlabeled
  bool flipped = false;  // flip augmentation disables semantic supervision
};

template <class T>
struct TotalLossResult {
  Tensor<T> total;  // graph scalar, feed to backward()
  LossReport report;
};

template <class T>
TotalLossResult<T> total_loss(const TotalLossInputs<T>& in, LossMode mode,
                              const LossWeights& w) {
  TotalLossResult<T> out;
  Tensor<T> depth = depth_loss(in.scales, w, &out.report);
  out.report.depth = static_cast<double>(depth.item());
  Tensor<T> total = mul_scalar(depth, static_cast<T>(w.alpha_d));

  const bool sem_active = mode_uses_semantic(mode) && !in.flipped;
  const bool cdd_active = mode_uses_cdd(mode) && !in.flipped;
  if ((mode_uses_semantic(mode) || mode_uses_cdd(mode)) && !in.flipped &&
      in.sem_target == nullptr) {
    throw DataError(std::string("total_loss: mode ") + loss_mode_name(mode) +
                    " needs a semantic target but the sample has none");
  }
  if (sem_active) {
    if (in.sem_logits == nullptr) {
      throw DataError("total_loss: semantic term active but no logits given");
    }
    Tensor<T> sem = semantic_loss(*in.sem_logits, *in.sem_target);
    out.report.semantic = static_cast<double>(sem.item());
    total = add(total, mul_scalar(sem, static_cast<T>(w.alpha_s)));
  }
  if (cdd_active) {
    // Full resolution only, on the left disparity (the reference view).
    Tensor<T> cdd = cdd_loss(in.scales.at(0).d_l, *in.sem_target);
    out.report.cdd = static_cast<double>(cdd.item());
    total = add(total, mul_scalar(cdd, static_cast<T>(w.alpha_cdd)));
  }
  out.report.total = static_cast<double>(total.item());
  out.total = total;
  return out;
}

}  // namespace semdepth
