#include "semdepth/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "semdepth/error.hpp"
#include "semdepth/image_ops.hpp"

namespace semdepth {

void EvalConfig::validate() const {
  if (min_depth <= 0 || max_depth <= min_depth) {
    throw DataError("eval config: need 0 < min_depth < max_depth");
  }
  if (delta_base <= 1.0) {
    throw DataError("eval config: delta base must exceed 1");
  }
}

Tensor<float> disparity_to_depth(const Tensor<float>& disparity,
                                 const Calib& calib, const EvalConfig& cfg) {
  cfg.validate();
  if (calib.focal_px <= 0 || calib.baseline_m <= 0) {
    throw DataError("disparity_to_depth: non-positive calibration");
  }
  const float fb = static_cast<float>(calib.focal_px * calib.baseline_m);
  const float lo = static_cast<float>(cfg.min_depth);
  const float hi = static_cast<float>(cfg.max_depth);
  Tensor<float> depth(disparity.shape());
  auto dv = disparity.values();
  auto ov = depth.values();
  for (std::size_t i = 0; i < dv.size(); ++i) {
    if (dv[i] < 0.0f) {
      throw DataError("disparity_to_depth: negative disparity");
    }
    ov[i] = dv[i] > 0.0f ? std::clamp(fb / dv[i], lo, hi) : 0.0f;
  }
  return depth;
}

DepthMetrics depth_metrics(const Tensor<float>& pred, const Tensor<float>& gt,
                           const EvalConfig& cfg) {
  cfg.validate();
  require_same_shape(pred.shape(), gt.shape(), "depth_metrics");
  auto pv = pred.values();
  auto gv = gt.values();
  const double t1 = cfg.delta_base;
  const double t2 = t1 * t1;
  const double t3 = t2 * t1;
  double abs_rel = 0, sq_rel = 0, se = 0, se_log = 0;
  std::int64_t n = 0, d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < gv.size(); ++i) {
    const double g = gv[i];
    if (g <= 0.0) continue;
    const double p = pv[i];
    if (p <= 0.0) {
      throw NumericalError("depth_metrics: non-positive prediction at a "
                           "valid pixel");
    }
    const double diff = p - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    se += diff * diff;
    const double dlog = std::log(p) - std::log(g);
    se_log += dlog * dlog;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < t1;
    d2 += ratio < t2;
    d3 += ratio < t3;
    ++n;
  }
  if (n == 0) throw DataError("depth_metrics: no valid ground-truth pixels");
  const double inv = 1.0 / static_cast<double>(n);
  DepthMetrics m;
  m.abs_rel = abs_rel * inv;
  m.sq_rel = sq_rel * inv;
  m.rmse = std::sqrt(se * inv);
  m.rmse_log = std::sqrt(se_log * inv);
  m.delta1 = static_cast<double>(d1) * inv;
  m.delta2 = static_cast<double>(d2) * inv;
  m.delta3 = static_cast<double>(d3) * inv;
  return m;
}

double semantic_accuracy(const std::vector<int>& pred,
                         const SemanticTarget& gt) {
  if (pred.size() != gt.labels.size()) {
    throw ShapeError("semantic_accuracy: prediction size " +
                     std::to_string(pred.size()) + " vs target " +
                     std::to_string(gt.labels.size()));
  }
  std::int64_t n = 0, hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt.labels[i] == SemanticTarget::kIgnore) continue;
    ++n;
    hit += pred[i] == gt.labels[i];
  }
  if (n == 0) throw DataError("semantic_accuracy: all pixels ignored");
  return static_cast<double>(hit) / static_cast<double>(n);
}

Tensor<float> postprocess_flip(const Tensor<float>& d_image,
                               const Tensor<float>& d_flip) {
  require_same_shape(d_image.shape(), d_flip.shape(), "postprocess_flip");
  Tensor<float> mirrored = flip_horizontal(d_flip);
  Tensor<float> out(d_image.shape());
  auto a = d_image.values();
  auto b = mirrored.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.5f * (a[i] + b[i]);
  return out;
}

}  // namespace semdepth
