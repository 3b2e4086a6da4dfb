#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semdepth/data.hpp"
#include "semdepth/image_ops.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/metrics.hpp"
#include "semdepth/network.hpp"
#include "semdepth/tensor.hpp"

// Optimization loop and orchestration: Adam with the epoch-halving schedule,
// deterministic shuffling/augmentation, checkpoint + CSV logging, evaluation
// with optional flip post-processing, and the four-mode ablation driver.

namespace semdepth {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 2;
  double lr0 = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  LossMode mode = LossMode::kD;
  LossWeights weights;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  bool verbose = false;  // per-epoch stderr echo; artifacts are unaffected

  void validate() const;
};

// lr0, halved once at 60% of the run and again at 80% (the classic
// 30-then-40-of-50-epochs schedule generalized to arbitrary budgets).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct OptimizerState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<float>> m, v;  // canonical parameter order
};

OptimizerState make_optimizer_state(const ModelParams<float>& params,
                                    double beta1 = 0.9, double beta2 = 0.999,
                                    double eps = 1e-8);

// Standard bias-corrected Adam over the flat parameter list; grads follow the
// same canonical order. Rejects shape mismatches and non-finite gradients.
void adam_step(ModelParams<float>& params,
               const std::vector<std::vector<float>>& grads,
               OptimizerState& state, double lr);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double total = 0, depth = 0, semantic = 0, cdd = 0;  // epoch means
  double wall_ms = 0;  // console only; never persisted (determinism)
};

struct RunLog {
  std::vector<EpochLog> epochs;
};

// Forward + composite loss for one already-augmented sample on a fresh
// graph. Templated so the 64-bit gradient suite can reuse the exact training
// pipeline. The sample's semantic target must carry num_classes.
template <class T>
TotalLossResult<T> sample_loss(Graph<T>& g, const BoundParams<T>& bp,
                               const ModelConfig& mcfg, const StereoSample& s,
                               bool flipped, LossMode mode,
                               const LossWeights& w) {
  Tensor<T> full_l = tensor_cast<float, T>(s.left);
  Tensor<T> full_r = tensor_cast<float, T>(s.right);
  const int scales = mcfg.num_scales();
  std::vector<Tensor<T>> pyr_l{full_l}, pyr_r{full_r};
  for (int sc = 1; sc < scales; ++sc) {
    pyr_l.push_back(downsample2x_avg(pyr_l.back()));
    pyr_r.push_back(downsample2x_avg(pyr_r.back()));
  }
  Tensor<T> input = g.leaf(pyr_l[0]);
  const bool need_sem = mode_uses_semantic(mode) && !flipped;
  ForwardResult<T> fwd = forward(g, bp, mcfg, input, need_sem);

  TotalLossInputs<T> in;
  in.flipped = flipped;
  in.sem_target = flipped ? nullptr : &s.semantic;
  if (fwd.has_sem) in.sem_logits = &fwd.sem_logits;
  for (int sc = 0; sc < scales; ++sc) {
    in.scales.push_back(ScaleInputs<T>{
        fwd.d_l[sc], fwd.d_r[sc],
        sc == 0 ? input : g.leaf(pyr_l[sc]), g.leaf(pyr_r[sc])});
  }
  return total_loss(in, mode, w);
}

// Trains on in-memory samples; deterministic in (cfg, data). When out_dir is
// non-empty, checkpoint.bin and train_log.csv are rewritten every epoch.
// start can seed the parameters (two-stage training); null = fresh init.
ModelParams<float> train_samples(const TrainConfig& cfg,
                                 const ModelConfig& mcfg,
                                 const std::vector<StereoSample>& samples,
                                 const std::string& out_dir,
                                 RunLog* log = nullptr,
                                 const ModelParams<float>* start = nullptr);

// Same, loading samples from manifest prefixes first.
ModelParams<float> train(const TrainConfig& cfg, const ModelConfig& mcfg,
                         const std::vector<std::string>& prefixes,
                         const std::string& out_dir, RunLog* log = nullptr,
                         const ModelParams<float>* start = nullptr);

struct EvalRow {
  std::string name;
  DepthMetrics depth;
  double sem_acc = 0;
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  EvalRow aggregate;  // mean over rows, name "mean"
};

EvalSummary evaluate_samples(const ModelParams<float>& params,
                             const std::vector<StereoSample>& samples,
                             const std::vector<std::string>& names,
                             const EvalConfig& ecfg, bool pp);

EvalSummary evaluate(const ModelParams<float>& params,
                     const std::vector<std::string>& prefixes,
                     const EvalConfig& ecfg, bool pp);

// Per-sample rows plus the aggregate, eight metric columns.
void write_metrics_csv(const std::string& path, const EvalSummary& summary);

// Full-resolution left disparity and argmax labels for one image; pp applies
// to disparity only.
struct Prediction {
  Tensor<float> disparity;       // (1,1,H,W)
  std::vector<int> labels;       // argmax ids, row-major
  int num_classes = 0;
};

Prediction predict_image(const ModelParams<float>& params,
                         const Tensor<float>& image, bool pp);

// Writes prefix_disp.pgm (x256), prefix_sem.pgm, prefix_preview.pgm.
void predict(const ModelParams<float>& params, const std::string& image_path,
             const std::string& out_prefix, bool pp);

struct AblationRow {
  LossMode mode;
  std::uint64_t seed = 0;
  DepthMetrics no_pp, pp;
  double sem_acc = 0;  // from the no-pp pass
};

// Trains and evaluates every (mode, seed) pair with otherwise identical
// configuration; base.mode and base.seed are overridden per run.
std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const ModelConfig& mcfg,
                                      const std::vector<StereoSample>& train_set,
                                      const std::vector<StereoSample>& eval_set,
                                      const std::vector<LossMode>& modes,
                                      const std::vector<std::uint64_t>& seeds,
                                      const EvalConfig& ecfg,
                                      bool verbose = false);

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows);

double median(std::vector<double> values);

}  // namespace semdepth
