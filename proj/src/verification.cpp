#include "semdepth/verification.hpp"

#include <cmath>
#include <functional>

#include "semdepth/data.hpp"
#include "semdepth/image_ops.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/network.hpp"
#include "semdepth/ops.hpp"
#include "semdepth/rng.hpp"
#include "semdepth/trainer.hpp"

namespace semdepth {

namespace {

using D = double;
using Tn = Tensor<double>;
using Leaves = std::vector<Tensor<double>>;

constexpr double kOpStep = 1e-5, kOpTol = 1e-4;
constexpr double kLossStep = 1e-5, kLossTol = 1e-3;
// The composite runs warps of textured images, whose derivative jumps at
// integer disparities; a small step keeps the probability of straddling such
// a kink negligible while double precision keeps quadrature noise far below
// the tolerance.
constexpr double kCompositeStep = 3e-5, kCompositeTol = 1e-3;

// Random fill; q > 0 snaps values to a grid so forward differences between
// neighbors are either exactly zero or well clear of the FD step (keeps |.|
// kinks out of the sampled neighborhood).
Tn rand_tensor(Shape s, std::uint64_t seed, double lo, double hi,
               double q = 0.0) {
  SplitMix64 rng(seed);
  Tn t(s);
  for (double& v : t.values()) {
    v = rng.uniform(lo, hi);
    if (q > 0) v = std::round(v / q) * q;
  }
  return t;
}

// Values with a magnitude of at least `margin`, random sign.
Tn rand_signed(Shape s, std::uint64_t seed, double margin, double span) {
  SplitMix64 rng(seed);
  Tn t(s);
  for (double& v : t.values()) {
    const double m = rng.uniform(margin, margin + span);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

// Disparities whose fractional part stays in [0.3, 0.7] so warp sampling
// positions sit well away from integer coordinates (bilinear kinks).
Tn rand_disparity(Shape s, std::uint64_t seed, int whole_max) {
  SplitMix64 rng(seed);
  Tn t(s);
  for (double& v : t.values()) {
    v = rng.uniform_int(0, whole_max) + rng.uniform(0.3, 0.7);
  }
  return t;
}

// Fixed random positive projection to a scalar; keeps every output element's
// gradient distinct and nonzero.
Tn pin(Graph<D>& g, const Tn& y, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tn w(y.shape());
  for (double& v : w.values()) v = rng.uniform(0.25, 1.0);
  return reduce_sum(mul(y, g.leaf(w)));
}

SemanticTarget fixture_labels(int h, int w, std::uint64_t seed,
                              double ignore_frac) {
  SemanticTarget t;
  t.n = 1;
  t.h = h;
  t.w = w;
  t.num_classes = 2;
  t.labels.resize(static_cast<std::size_t>(h) * w);
  SplitMix64 rng(seed);
  for (int& l : t.labels) {
    l = rng.bernoulli(ignore_frac) ? SemanticTarget::kIgnore
                                   : rng.uniform_int(0, 1);
  }
  return t;
}

GradCheckReport composite_check() {
  SceneConfig sc;
  sc.h = 16;
  sc.w = 32;
  sc.num_classes = 2;
  sc.min_objects = 2;
  sc.max_objects = 3;
  sc.d_min = 2;
  sc.d_max = 6;
  sc.texture_octaves = 2;  // frozen fixture; keep independent of defaults
  StereoSample sample = generate_scene(sc, 7);
  sample.semantic.num_classes = 2;

  ModelConfig mc;
  mc.encoder_channels = {8, 12};
  mc.num_classes = 2;
  ModelParams<D> mp = init_params<D>(mc, 3);

  std::vector<std::string> names;
  Leaves inputs;
  for (auto& [n, t] : mp.params) {
    names.push_back(n);
    inputs.push_back(t);
  }
  auto f = [&](Graph<D>& g, const Leaves& bound) {
    BoundParams<D> bp;
    for (std::size_t i = 0; i < bound.size(); ++i) {
      bp.leaves.emplace_back(names[i], bound[i]);
    }
    return sample_loss(g, bp, mc, sample, false, LossMode::kDSCdd,
                       LossWeights{})
        .total;
  };
  return grad_check_multi<D>(f, inputs, kCompositeStep, kCompositeTol);
}

}  // namespace

std::vector<VerificationEntry> run_gradient_suite() {
  std::vector<VerificationEntry> out;
  auto check = [&out](const std::string& name, const Leaves& inputs,
                      std::function<Tn(Graph<D>&, const Leaves&)> f,
                      double step, double tol) {
    out.push_back({name, grad_check_multi<D>(f, inputs, step, tol)});
  };
  auto op = [&check](const std::string& name, const Leaves& inputs,
                     std::function<Tn(Graph<D>&, const Leaves&)> f) {
    check("op." + name, inputs, std::move(f), kOpStep, kOpTol);
  };

  const Shape s234{2, 3, 4, 4};
  const Tn xa = rand_tensor(s234, 11, -1, 1);
  const Tn xb = rand_tensor(s234, 12, -1, 1);

  op("add", {xa, xb},
     [](Graph<D>& g, const Leaves& l) { return pin(g, add(l[0], l[1]), 1); });
  op("sub", {xa, xb},
     [](Graph<D>& g, const Leaves& l) { return pin(g, sub(l[0], l[1]), 2); });
  op("mul", {xa, xb},
     [](Graph<D>& g, const Leaves& l) { return pin(g, mul(l[0], l[1]), 3); });
  op("div", {xa, rand_signed(s234, 13, 0.5, 1.0)},
     [](Graph<D>& g, const Leaves& l) { return pin(g, div(l[0], l[1]), 4); });
  op("neg", {xa},
     [](Graph<D>& g, const Leaves& l) { return pin(g, neg(l[0]), 5); });
  op("exp", {xa},
     [](Graph<D>& g, const Leaves& l) { return pin(g, exp(l[0]), 6); });
  op("log", {rand_tensor(s234, 14, 0.5, 1.5)},
     [](Graph<D>& g, const Leaves& l) { return pin(g, log(l[0]), 7); });
  op("abs", {rand_signed(s234, 15, 0.1, 0.9)},
     [](Graph<D>& g, const Leaves& l) { return pin(g, abs(l[0]), 8); });
  op("sigmoid", {xa},
     [](Graph<D>& g, const Leaves& l) { return pin(g, sigmoid(l[0]), 9); });
  op("elu", {rand_signed(s234, 16, 0.1, 0.9)},
     [](Graph<D>& g, const Leaves& l) { return pin(g, elu(l[0]), 10); });
  op("clamp", {rand_signed(s234, 17, 0.1, 0.6)},
     [](Graph<D>& g, const Leaves& l) {
       return pin(g, clamp(l[0], -0.8, 0.8), 11);
     });
  op("add_scalar", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, add_scalar(l[0], 0.37), 12);
  });
  op("mul_scalar", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, mul_scalar(l[0], -1.3), 13);
  });

  const Tn cin = rand_tensor(Shape{2, 3, 6, 7}, 18, -1, 1);
  const Tn cw = rand_tensor(Shape{4, 3, 3, 3}, 19, -1, 1);
  const Tn cb = rand_tensor(Shape{1, 4, 1, 1}, 20, -1, 1);
  op("conv2d_s1", {cin, cw, cb}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, conv2d(l[0], l[1], l[2], 1), 14);
  });
  op("conv2d_s2", {cin, cw, cb}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, conv2d(l[0], l[1], l[2], 2), 15);
  });

  op("upsample_nearest", {rand_tensor(Shape{2, 2, 3, 4}, 21, -1, 1)},
     [](Graph<D>& g, const Leaves& l) {
       return pin(g, upsample2x_nearest(l[0]), 16);
     });
  op("upsample_bilinear", {rand_tensor(Shape{2, 2, 3, 4}, 22, -1, 1)},
     [](Graph<D>& g, const Leaves& l) {
       return pin(g, upsample2x_bilinear(l[0]), 17);
     });
  op("avg_pool", {rand_tensor(Shape{2, 2, 5, 6}, 23, -1, 1)},
     [](Graph<D>& g, const Leaves& l) {
       return pin(g, avg_pool_valid(l[0], 3), 18);
     });

  op("reduce_sum", {xa},
     [](Graph<D>& g, const Leaves& l) { return reduce_sum(l[0]); });
  op("reduce_mean", {xa},
     [](Graph<D>& g, const Leaves& l) { return reduce_mean(l[0]); });
  op("reduce_mean_spatial", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, reduce_mean_spatial(l[0]), 19);
  });
  op("mean_channels", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, mean_channels(l[0]), 20);
  });
  op("concat_channels", {xa, rand_tensor(Shape{2, 2, 4, 4}, 24, -1, 1)},
     [](Graph<D>& g, const Leaves& l) {
       return pin(g, concat_channels(l[0], l[1]), 21);
     });
  op("slice_channels", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, slice_channels(l[0], 1, 3), 22);
  });
  op("slice_x", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, slice_x(l[0], 1, 4), 23);
  });
  op("slice_y", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, slice_y(l[0], 0, 3), 24);
  });

  const Shape w18{1, 1, 8, 8};
  const Tn wsrc = rand_tensor(Shape{1, 2, 8, 8}, 25, 0.1, 0.9);
  const Tn wdisp = rand_disparity(w18, 26, 2);
  op("warp_left_from_right", {wsrc, wdisp}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, warp_horizontal(l[0], l[1], WarpDirection::kLeftFromRight),
               25);
  });
  op("warp_right_from_left", {wsrc, wdisp}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, warp_horizontal(l[0], l[1], WarpDirection::kRightFromLeft),
               26);
  });

  op("ssim",
     {rand_tensor(Shape{1, 3, 8, 8}, 27, 0.1, 0.9),
      rand_tensor(Shape{1, 3, 8, 8}, 28, 0.1, 0.9)},
     [](Graph<D>& g, const Leaves& l) {
       return pin(g, ssim(l[0], l[1], SsimConfig{}), 27);
     });
  op("spatial_gradient_x", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, spatial_gradient(l[0], Axis::kX), 28);
  });
  op("spatial_gradient_y", {xa}, [](Graph<D>& g, const Leaves& l) {
    return pin(g, spatial_gradient(l[0], Axis::kY), 29);
  });

  // Loss terms on 2-class 16x32 fixtures.
  const Shape img{1, 3, 16, 32}, dmap{1, 1, 16, 32};
  check("loss.appearance",
        {rand_tensor(img, 31, 0.1, 0.9, 0.01), rand_tensor(img, 32, 0.1, 0.9, 0.01)},
        [](Graph<D>& g, const Leaves& l) {
          return appearance_loss(l[0], l[1], 0.85);
        },
        kLossStep, kLossTol);
  check("loss.smoothness",
        {rand_tensor(dmap, 33, 1.0, 5.0, 0.01), rand_tensor(img, 34, 0.1, 0.9, 0.01)},
        [](Graph<D>& g, const Leaves& l) {
          return smoothness_loss(l[0], l[1]);
        },
        kLossStep, kLossTol);
  check("loss.lr_consistency",
        {rand_disparity(w18, 35, 2), rand_disparity(w18, 36, 2)},
        [](Graph<D>& g, const Leaves& l) {
          return lr_consistency_loss(l[0], l[1]);
        },
        kLossStep, kLossTol);

  const SemanticTarget labels = fixture_labels(16, 32, 37, 0.1);
  check("loss.semantic", {rand_tensor(Shape{1, 2, 16, 32}, 38, -1, 1)},
        [labels](Graph<D>& g, const Leaves& l) {
          return semantic_loss(l[0], labels);
        },
        kLossStep, kLossTol);
  // Checkerboard labels: every pixel sits on a class boundary, so every
  // disparity element carries a nonzero gradient (an ignored or interior
  // pixel would have an exact zero that finite differences can only match
  // up to quadrature noise). The disparity pattern keeps every neighbor
  // difference above 1.2 px — far from the |.| kink — while the continuous
  // jitter rules out coincidental cancellations between a pixel's pairs.
  SemanticTarget board = fixture_labels(16, 32, 37, 0.0);
  for (int y = 0; y < board.h; ++y)
    for (int x = 0; x < board.w; ++x) board.labels[y * board.w + x] = (y + x) & 1;
  Tn cdd_d(dmap);
  {
    SplitMix64 jitter(39);
    auto dv = cdd_d.values();
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 32; ++x) {
        dv[y * 32 + x] =
            2.0 + 0.8 * ((7 * x + 3 * y) % 5) + jitter.uniform(0.0, 0.04);
      }
  }
  check("loss.cdd", {cdd_d},
        [board](Graph<D>& g, const Leaves& l) {
          return cdd_loss(l[0], board);
        },
        kLossStep, kLossTol);

  check("loss.depth",
        {rand_disparity(dmap, 40, 2), rand_disparity(dmap, 41, 2),
         rand_tensor(img, 42, 0.1, 0.9), rand_tensor(img, 43, 0.1, 0.9),
         rand_disparity(Shape{1, 1, 8, 16}, 44, 1),
         rand_disparity(Shape{1, 1, 8, 16}, 45, 1),
         rand_tensor(Shape{1, 3, 8, 16}, 46, 0.1, 0.9),
         rand_tensor(Shape{1, 3, 8, 16}, 47, 0.1, 0.9)},
        [](Graph<D>& g, const Leaves& l) {
          std::vector<ScaleInputs<D>> scales{{l[0], l[1], l[2], l[3]},
                                             {l[4], l[5], l[6], l[7]}};
          return depth_loss(scales, LossWeights{});
        },
        kLossStep, kLossTol);

  out.push_back({"loss.composite", composite_check()});
  return out;
}

bool suite_passed(const std::vector<VerificationEntry>& entries) {
  for (const VerificationEntry& e : entries) {
    if (!e.report.passed) return false;
  }
  return true;
}

}  // namespace semdepth
