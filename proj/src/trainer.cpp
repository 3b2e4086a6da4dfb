#include "semdepth/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "semdepth/checkpoint.hpp"
#include "semdepth/image_io.hpp"
#include "semdepth/rng.hpp"

namespace semdepth {

namespace {

// Stateless per-(epoch, sample) seeds so runs replay bit-identically no
// matter how training is sliced (negative row keeps shuffle and augmentation
// streams disjoint).
std::uint64_t shuffle_seed(std::uint64_t base, int epoch) {
  return hash_coords(base, -1 - epoch, 0);
}

std::uint64_t augment_seed(std::uint64_t base, int epoch, int index) {
  return hash_coords(base, epoch, index + 1);
}

// Shortest round-trippable decimal form; CSV logs must be bit-reproducible.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ModelParams<float> clone_params(const ModelParams<float>& src) {
  ModelParams<float> dst;
  dst.cfg = src.cfg;
  for (const auto& [name, t] : src.params) {
    dst.params.emplace_back(
        name, Tensor<float>(t.shape(),
                            std::vector<float>(t.values().begin(),
                                               t.values().end())));
  }
  return dst;
}

Tensor<float> detach(const Tensor<float>& t) {
  return Tensor<float>(
      t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
}

std::vector<int> argmax_channels(const Tensor<float>& logits) {
  const Shape s = logits.shape();
  std::vector<int> out(static_cast<std::size_t>(s.n) * s.h * s.w);
  auto v = logits.values();
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n)
    for (std::int64_t p = 0; p < plane; ++p) {
      const float* px = v.data() + (static_cast<std::int64_t>(n) * s.c) * plane + p;
      int best = 0;
      float best_v = px[0];
      for (int c = 1; c < s.c; ++c) {
        const float cv = px[static_cast<std::int64_t>(c) * plane];
        if (cv > best_v) {  // ties keep the lowest class id
          best_v = cv;
          best = c;
        }
      }
      out[static_cast<std::size_t>(n) * plane + p] = best;
    }
  return out;
}

void write_train_csv(const std::string& path,
                     const std::vector<EpochLog>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os << "epoch,lr,total,depth,semantic,cdd\n";
  for (const EpochLog& r : rows) {
    os << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.total) << ','
       << fmt(r.depth) << ',' << fmt(r.semantic) << ',' << fmt(r.cdd) << '\n';
  }
}

void write_pgm8(const std::string& path, int h, int w,
                const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os << "P5\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("short write to " + path);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs <= 0) throw DataError("train config: epochs must be positive");
  if (batch_size <= 0)
    throw DataError("train config: batch_size must be positive");
  if (!(lr0 > 0)) throw DataError("train config: lr0 must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw DataError("train config: betas must lie in [0, 1)");
  if (!(adam_eps > 0))
    throw DataError("train config: adam_eps must be positive");
  if (!(augment.flip_prob >= 0 && augment.flip_prob <= 1))
    throw DataError("train config: flip_prob must lie in [0, 1]");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  const int first = cfg.epochs * 3 / 5;   // 60% of the budget
  const int second = cfg.epochs * 4 / 5;  // 80%
  double lr = cfg.lr0;
  if (epoch >= first) lr *= 0.5;
  if (epoch >= second) lr *= 0.5;
  return lr;
}

OptimizerState make_optimizer_state(const ModelParams<float>& params,
                                    double beta1, double beta2, double eps) {
  OptimizerState st;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  for (const auto& [name, t] : params.params) {
    st.m.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
    st.v.emplace_back(static_cast<std::size_t>(t.numel()), 0.0f);
  }
  return st;
}

void adam_step(ModelParams<float>& params,
               const std::vector<std::vector<float>>& grads,
               OptimizerState& state, double lr) {
  if (grads.size() != params.params.size() ||
      state.m.size() != params.params.size()) {
    throw ShapeError("adam_step: gradient list does not match parameters");
  }
  state.t += 1;
  const double corr1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.params.size(); ++p) {
    auto& [name, tensor] = params.params[p];
    auto pv = tensor.values();
    const std::vector<float>& gv = grads[p];
    if (gv.size() != pv.size()) {
      throw ShapeError("adam_step: gradient size mismatch for " + name);
    }
    std::vector<float>& m = state.m[p];
    std::vector<float>& v = state.v[p];
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double g = gv[i];
      if (!std::isfinite(g)) {
        throw NumericalError("adam_step: non-finite gradient in " + name);
      }
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      pv[i] = static_cast<float>(
          pv[i] - lr * (mi / corr1) / (std::sqrt(vi / corr2) + state.eps));
    }
  }
}

ModelParams<float> train_samples(const TrainConfig& cfg,
                                 const ModelConfig& mcfg,
                                 const std::vector<StereoSample>& samples_in,
                                 const std::string& out_dir, RunLog* log,
                                 const ModelParams<float>* start) {
  cfg.validate();
  mcfg.validate();
  if (samples_in.empty()) throw DataError("train: no samples");

  // Loaded label maps do not carry a class count; the model config decides.
  std::vector<StereoSample> samples = samples_in;
  for (StereoSample& s : samples) s.semantic.num_classes = mcfg.num_classes;

  ModelParams<float> params;
  if (start != nullptr) {
    if (!(start->cfg == mcfg)) {
      throw DataError("train: starting parameters built for another config");
    }
    params = clone_params(*start);
  } else {
    params = init_params<float>(mcfg, cfg.seed);
  }
  OptimizerState state =
      make_optimizer_state(params, cfg.beta1, cfg.beta2, cfg.adam_eps);

  const std::size_t num_params = params.params.size();
  std::vector<std::vector<float>> grads(num_params);
  for (std::size_t p = 0; p < num_params; ++p) {
    grads[p].resize(static_cast<std::size_t>(params.params[p].second.numel()));
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLog> rows;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    SplitMix64 rng(shuffle_seed(cfg.seed, epoch));
    deterministic_shuffle(order, rng);

    double sum_total = 0, sum_depth = 0, sum_sem = 0, sum_cdd = 0;
    const int n = static_cast<int>(samples.size());
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const int b1 = std::min(b0 + cfg.batch_size, n);
      for (std::vector<float>& acc : grads) {
        std::fill(acc.begin(), acc.end(), 0.0f);
      }
      for (int k = b0; k < b1; ++k) {
        const int idx = order[static_cast<std::size_t>(k)];
        auto [aug, flipped] =
            augment(samples[static_cast<std::size_t>(idx)], cfg.augment,
                    augment_seed(cfg.seed, epoch, idx));
        Graph<float> g;
        BoundParams<float> bp = bind_params(g, params, true);
        TotalLossResult<float> res;
        try {
          res = sample_loss(g, bp, mcfg, aug, flipped, cfg.mode, cfg.weights);
          g.backward(res.total);
        } catch (const NumericalError& e) {
          throw NumericalError("epoch " + std::to_string(epoch) + " sample " +
                               std::to_string(idx) + ": " + e.what());
        }
        for (std::size_t p = 0; p < num_params; ++p) {
          const Tensor<float>& leaf = bp.leaves[p].second;
          if (!leaf.has_grad()) continue;  // e.g. semantic decoder in mode d
          auto gv = leaf.grad();
          float* acc = grads[p].data();
          for (std::size_t i = 0; i < gv.size(); ++i) acc[i] += gv[i];
        }
        sum_total += res.report.total;
        sum_depth += res.report.depth;
        sum_sem += res.report.semantic;
        sum_cdd += res.report.cdd;
      }
      const float inv = 1.0f / static_cast<float>(b1 - b0);
      for (std::vector<float>& acc : grads) {
        for (float& gval : acc) gval *= inv;
      }
      adam_step(params, grads, state, lr);
    }

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    el.total = sum_total / n;
    el.depth = sum_depth / n;
    el.semantic = sum_sem / n;
    el.cdd = sum_cdd / n;
    el.wall_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    rows.push_back(el);
    if (log != nullptr) log->epochs.push_back(el);
    if (cfg.verbose) {
      std::fprintf(stderr,
                   "[train] epoch %3d lr %.2e total %.6f depth %.6f sem %.6f "
                   "cdd %.6f (%.0f ms)\n",
                   epoch, lr, el.total, el.depth, el.semantic, el.cdd,
                   el.wall_ms);
    }
    if (!out_dir.empty()) {
      save_checkpoint(out_dir + "/checkpoint.bin", params);
      write_train_csv(out_dir + "/train_log.csv", rows);
    }
  }
  return params;
}

ModelParams<float> train(const TrainConfig& cfg, const ModelConfig& mcfg,
                         const std::vector<std::string>& prefixes,
                         const std::string& out_dir, RunLog* log,
                         const ModelParams<float>* start) {
  std::vector<StereoSample> samples;
  samples.reserve(prefixes.size());
  for (const std::string& p : prefixes) samples.push_back(load_sample(p));
  return train_samples(cfg, mcfg, samples, out_dir, log, start);
}

Prediction predict_image(const ModelParams<float>& params,
                         const Tensor<float>& image, bool pp) {
  const ModelConfig& mcfg = params.cfg;
  mcfg.validate();

  auto run = [&](const Tensor<float>& img, bool want_sem) {
    Graph<float> g;
    BoundParams<float> bp = bind_params(g, params, false);
    ForwardResult<float> fwd = forward(g, bp, mcfg, g.leaf(img), want_sem);
    std::pair<Tensor<float>, std::vector<int>> out;
    out.first = detach(fwd.d_l[0]);
    if (want_sem) out.second = argmax_channels(fwd.sem_logits);
    return out;
  };

  auto [disp, labels] = run(image, true);
  Prediction pr;
  pr.num_classes = mcfg.num_classes;
  pr.labels = std::move(labels);
  if (pp) {
    // Mirror trick: average with the re-mirrored prediction on the flipped
    // input. Disparity only; labels come from the straight pass.
    auto [disp_flip, unused] = run(flip_horizontal(image), false);
    pr.disparity = postprocess_flip(disp, disp_flip);
  } else {
    pr.disparity = disp;
  }
  return pr;
}

void predict(const ModelParams<float>& params, const std::string& image_path,
             const std::string& out_prefix, bool pp) {
  Tensor<float> img = load_ppm(image_path);
  Prediction pr = predict_image(params, img, pp);
  const Shape ds = pr.disparity.shape();

  save_disparity_pgm(out_prefix + "_disp.pgm", pr.disparity);

  SemanticTarget lab;
  lab.n = 1;
  lab.h = ds.h;
  lab.w = ds.w;
  lab.num_classes = pr.num_classes;
  lab.labels = pr.labels;
  save_label_pgm(out_prefix + "_sem.pgm", lab);

  // Human-viewable disparity, normalized to the map's own maximum.
  auto dv = pr.disparity.values();
  float peak = 0;
  for (float v : dv) peak = std::max(peak, v);
  std::vector<std::uint8_t> bytes(dv.size());
  for (std::size_t i = 0; i < dv.size(); ++i) {
    const double norm = peak > 0 ? dv[i] / peak : 0.0;
    bytes[i] = static_cast<std::uint8_t>(std::lround(norm * 255.0));
  }
  write_pgm8(out_prefix + "_preview.pgm", ds.h, ds.w, bytes);
}

EvalSummary evaluate_samples(const ModelParams<float>& params,
                             const std::vector<StereoSample>& samples,
                             const std::vector<std::string>& names,
                             const EvalConfig& ecfg, bool pp) {
  ecfg.validate();
  if (samples.empty()) throw DataError("evaluate: no samples");
  EvalSummary out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const StereoSample& s = samples[i];
    SemanticTarget gt_sem = s.semantic;
    gt_sem.num_classes = params.cfg.num_classes;

    Prediction pr = predict_image(params, s.left, pp);
    Tensor<float> pred_depth = disparity_to_depth(pr.disparity, s.calib, ecfg);
    Tensor<float> gt_depth = disparity_to_depth(s.gt_disparity, s.calib, ecfg);

    EvalRow row;
    row.name = i < names.size() ? names[i] : "sample_" + std::to_string(i);
    row.depth = depth_metrics(pred_depth, gt_depth, ecfg);
    row.sem_acc = semantic_accuracy(pr.labels, gt_sem);
    out.rows.push_back(std::move(row));
  }

  EvalRow& agg = out.aggregate;
  agg.name = "mean";
  const double inv = 1.0 / static_cast<double>(out.rows.size());
  for (const EvalRow& r : out.rows) {
    agg.depth.abs_rel += r.depth.abs_rel * inv;
    agg.depth.sq_rel += r.depth.sq_rel * inv;
    agg.depth.rmse += r.depth.rmse * inv;
    agg.depth.rmse_log += r.depth.rmse_log * inv;
    agg.depth.delta1 += r.depth.delta1 * inv;
    agg.depth.delta2 += r.depth.delta2 * inv;
    agg.depth.delta3 += r.depth.delta3 * inv;
    agg.sem_acc += r.sem_acc * inv;
  }
  return out;
}

EvalSummary evaluate(const ModelParams<float>& params,
                     const std::vector<std::string>& prefixes,
                     const EvalConfig& ecfg, bool pp) {
  std::vector<StereoSample> samples;
  std::vector<std::string> names;
  samples.reserve(prefixes.size());
  for (const std::string& p : prefixes) {
    samples.push_back(load_sample(p));
    const std::size_t slash = p.find_last_of('/');
    names.push_back(slash == std::string::npos ? p : p.substr(slash + 1));
  }
  return evaluate_samples(params, samples, names, ecfg, pp);
}

void write_metrics_csv(const std::string& path, const EvalSummary& summary) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os << "name,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,sem_acc\n";
  auto emit = [&os](const EvalRow& r) {
    os << r.name << ',' << fmt(r.depth.abs_rel) << ',' << fmt(r.depth.sq_rel)
       << ',' << fmt(r.depth.rmse) << ',' << fmt(r.depth.rmse_log) << ','
       << fmt(r.depth.delta1) << ',' << fmt(r.depth.delta2) << ','
       << fmt(r.depth.delta3) << ',' << fmt(r.sem_acc) << '\n';
  };
  for (const EvalRow& r : summary.rows) emit(r);
  emit(summary.aggregate);
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const ModelConfig& mcfg,
                                      const std::vector<StereoSample>& train_set,
                                      const std::vector<StereoSample>& eval_set,
                                      const std::vector<LossMode>& modes,
                                      const std::vector<std::uint64_t>& seeds,
                                      const EvalConfig& ecfg, bool verbose) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (LossMode mode : modes) {
      TrainConfig cfg = base;
      cfg.mode = mode;
      cfg.seed = seed;
      if (verbose) {
        std::fprintf(stderr, "[ablate] mode=%s seed=%llu training...\n",
                     loss_mode_name(mode),
                     static_cast<unsigned long long>(seed));
      }
      ModelParams<float> params = train_samples(cfg, mcfg, train_set, "");
      EvalSummary plain = evaluate_samples(params, eval_set, {}, ecfg, false);
      EvalSummary mirrored = evaluate_samples(params, eval_set, {}, ecfg, true);
      AblationRow row;
      row.mode = mode;
      row.seed = seed;
      row.no_pp = plain.aggregate.depth;
      row.pp = mirrored.aggregate.depth;
      row.sem_acc = plain.aggregate.sem_acc;
      rows.push_back(row);
      if (verbose) {
        std::fprintf(stderr, "[ablate] mode=%s seed=%llu abs_rel=%.6f pp=%.6f\n",
                     loss_mode_name(mode),
                     static_cast<unsigned long long>(seed),
                     row.no_pp.abs_rel, row.pp.abs_rel);
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os << "mode,seed,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,"
        "sem_acc,pp_abs_rel\n";
  auto emit_metrics = [&os](const DepthMetrics& m) {
    os << fmt(m.abs_rel) << ',' << fmt(m.sq_rel) << ',' << fmt(m.rmse) << ','
       << fmt(m.rmse_log) << ',' << fmt(m.delta1) << ',' << fmt(m.delta2)
       << ',' << fmt(m.delta3);
  };
  for (const AblationRow& r : rows) {
    os << loss_mode_name(r.mode) << ',' << r.seed << ',';
    emit_metrics(r.no_pp);
    os << ',' << fmt(r.sem_acc) << ',' << fmt(r.pp.abs_rel) << '\n';
  }
  // One summary line per mode: the median Abs Rel across seeds, the headline
  // number of the ablation.
  std::vector<LossMode> seen;
  for (const AblationRow& r : rows) {
    if (std::find(seen.begin(), seen.end(), r.mode) == seen.end()) {
      seen.push_back(r.mode);
    }
  }
  for (LossMode mode : seen) {
    std::vector<double> abs_rel, pp_abs_rel;
    for (const AblationRow& r : rows) {
      if (r.mode == mode) {
        abs_rel.push_back(r.no_pp.abs_rel);
        pp_abs_rel.push_back(r.pp.abs_rel);
      }
    }
    os << loss_mode_name(mode) << ",median," << fmt(median(abs_rel))
       << ",,,,,,,," << fmt(median(pp_abs_rel)) << '\n';
  }
}

}  // namespace semdepth
