#pragma once

#include <vector>

#include "semdepth/image_io.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/tensor.hpp"

// Depth evaluation in the standard seven-metric suite, per-pixel semantic
// accuracy, disparity<->depth conversion, and flip-average post-processing.

namespace semdepth {

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
};

struct EvalConfig {
  double min_depth = 1e-3;  // meters
  double max_depth = 80.0;
  double delta_base = 1.25;

  void validate() const;
};

// depth = focal_px * baseline_m / d for d > 0, clamped to the configured
// range; pixels with d = 0 stay 0 (invalid marker).
Tensor<float> disparity_to_depth(const Tensor<float>& disparity,
                                 const Calib& calib, const EvalConfig& cfg);

// Evaluated over pixels where gt > 0; throws if none are valid.
DepthMetrics depth_metrics(const Tensor<float>& pred, const Tensor<float>& gt,
                           const EvalConfig& cfg);

// Fraction of non-ignore pixels whose predicted label matches.
double semantic_accuracy(const std::vector<int>& pred,
                         const SemanticTarget& gt);

// 0.5 * (d_image + mirror(d_flip)): d_flip is the raw prediction on the
// mirrored input, so mirroring it back aligns the two maps.
Tensor<float> postprocess_flip(const Tensor<float>& d_image,
                               const Tensor<float>& d_flip);

}  // namespace semdepth
