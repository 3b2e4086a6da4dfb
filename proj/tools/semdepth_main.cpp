#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semdepth/checkpoint.hpp"
#include "semdepth/data.hpp"
#include "semdepth/image_io.hpp"
#include "semdepth/metrics.hpp"
#include "semdepth/trainer.hpp"
#include "semdepth/verification.hpp"

// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

namespace {

using namespace semdepth;

void add_model_options(CLI::App* cmd, std::vector<int>& channels,
                       ModelConfig& mcfg) {
  cmd->add_option("--channels", channels, "Encoder channels per level")
      ->delimiter(',');
  cmd->add_option("--classes", mcfg.num_classes, "Semantic class count");
  cmd->add_option("--d-max-frac", mcfg.d_max_fraction,
                  "Max disparity as a fraction of image width");
}

LossMode parse_mode_or_throw(const std::string& s) {
  std::optional<LossMode> m = parse_loss_mode(s);
  if (!m) throw DataError("unknown loss mode '" + s + "'");
  return *m;
}

void print_aggregate(const EvalSummary& summary) {
  const EvalRow& a = summary.aggregate;
  std::printf(
      "samples %zu | abs_rel %.4f sq_rel %.4f rmse %.4f rmse_log %.4f "
      "d1 %.4f d2 %.4f d3 %.4f | sem_acc %.4f\n",
      summary.rows.size(), a.depth.abs_rel, a.depth.sq_rel, a.depth.rmse,
      a.depth.rmse_log, a.depth.delta1, a.depth.delta2, a.depth.delta3,
      a.sem_acc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Semi-supervised stereo depth estimation with joint semantics: "
      "synthetic data, training, evaluation, prediction"};
  app.require_subcommand(1);

  // gen -----------------------------------------------------------------
  SceneConfig gen_cfg;
  int gen_count = 16;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand(
      "gen", "Generate a synthetic stereo corpus plus manifest");
  gen->set_config("--config", "", "key=value config file (flags override)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of scenes");
  gen->add_option("--height", gen_cfg.h, "Scene height");
  gen->add_option("--width", gen_cfg.w, "Scene width");
  gen->add_option("--min-objects", gen_cfg.min_objects, "Min objects");
  gen->add_option("--max-objects", gen_cfg.max_objects, "Max objects");
  gen->add_option("--classes", gen_cfg.num_classes, "Semantic class count");
  gen->add_option("--d-min", gen_cfg.d_min, "Minimum disparity (px)");
  gen->add_option("--d-max", gen_cfg.d_max, "Maximum disparity (px)");
  gen->add_option("--octaves", gen_cfg.texture_octaves, "Texture octaves");
  gen->add_option("--seed", gen_cfg.seed, "Corpus seed");
  gen->callback([&] {
    const std::string manifest = generate_dataset(gen_cfg, gen_count, gen_out);
    std::printf("wrote %d scenes, manifest %s\n", gen_count, manifest.c_str());
  });

  // train ---------------------------------------------------------------
  TrainConfig tcfg;
  ModelConfig tmodel;
  std::vector<int> tchannels = tmodel.encoder_channels;
  std::string tmanifest, tout, tmode = "d", tpretrain;
  bool tquiet = false;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train a model on a generated corpus");
  train_cmd->set_config("--config", "", "key=value config file (flags override)");
  train_cmd->add_option("--manifest", tmanifest, "Training manifest")
      ->required();
  train_cmd->add_option("--out", tout, "Output directory")->required();
  train_cmd->add_option("--mode", tmode, "Loss mode: d, d+s, d+s+cdd, d+cdd");
  train_cmd->add_option("--epochs", tcfg.epochs, "Epochs");
  train_cmd->add_option("--batch", tcfg.batch_size, "Batch size");
  train_cmd->add_option("--lr0", tcfg.lr0, "Initial learning rate");
  train_cmd->add_option("--seed", tcfg.seed, "Run seed");
  train_cmd->add_option("--flip-prob", tcfg.augment.flip_prob,
                        "Flip-augmentation probability");
  train_cmd->add_option("--pretrain-manifest", tpretrain,
                        "Optional first-stage manifest (schedule restarts)");
  train_cmd->add_flag("--quiet", tquiet, "Suppress per-epoch progress");
  add_model_options(train_cmd, tchannels, tmodel);
  train_cmd->callback([&] {
    tcfg.mode = parse_mode_or_throw(tmode);
    tcfg.verbose = !tquiet;
    tmodel.encoder_channels = tchannels;
    std::vector<std::string> prefixes = load_manifest(tmanifest);
    if (!tpretrain.empty()) {
      std::vector<std::string> pre = load_manifest(tpretrain);
      RunLog pre_log;
      ModelParams<float> stage1 =
          train(tcfg, tmodel, pre, tout + "/pretrain", &pre_log);
      RunLog log;
      train(tcfg, tmodel, prefixes, tout, &log, &stage1);
    } else {
      RunLog log;
      train(tcfg, tmodel, prefixes, tout, &log);
    }
    std::printf("checkpoint %s/checkpoint.bin\nlog %s/train_log.csv\n",
                tout.c_str(), tout.c_str());
  });

  // eval ----------------------------------------------------------------
  std::string echeckpoint, emanifest, eout;
  bool epp = false;
  EvalConfig ecfg;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
  eval_cmd->set_config("--config", "", "key=value config file (flags override)");
  eval_cmd->add_option("--checkpoint", echeckpoint, "Checkpoint file")
      ->required();
  eval_cmd->add_option("--manifest", emanifest, "Evaluation manifest")
      ->required();
  eval_cmd->add_option("--out", eout, "Metrics CSV path")->required();
  eval_cmd->add_flag("--pp", epp, "Flip post-processing");
  eval_cmd->add_option("--min-depth", ecfg.min_depth, "Depth clamp floor (m)");
  eval_cmd->add_option("--max-depth", ecfg.max_depth, "Depth clamp ceil (m)");
  eval_cmd->callback([&] {
    ModelParams<float> params = load_checkpoint(echeckpoint);
    EvalSummary summary =
        evaluate(params, load_manifest(emanifest), ecfg, epp);
    write_metrics_csv(eout, summary);
    print_aggregate(summary);
  });

  // predict -------------------------------------------------------------
  std::string pcheckpoint, pimage, pout;
  bool ppp = false;
  CLI::App* pred_cmd = app.add_subcommand(
      "predict", "Run one image through a checkpoint and write maps");
  pred_cmd->add_option("--checkpoint", pcheckpoint, "Checkpoint file")
      ->required();
  pred_cmd->add_option("--image", pimage, "Input PPM image")->required();
  pred_cmd->add_option("--out", pout, "Output prefix")->required();
  pred_cmd->add_flag("--pp", ppp, "Flip post-processing (disparity only)");
  pred_cmd->callback([&] {
    ModelParams<float> params = load_checkpoint(pcheckpoint);
    predict(params, pimage, pout, ppp);
    std::printf("wrote %s_disp.pgm %s_sem.pgm %s_preview.pgm\n", pout.c_str(),
                pout.c_str(), pout.c_str());
  });

  // gradcheck -----------------------------------------------------------
  CLI::App* gc_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference verification of all backward passes");
  gc_cmd->callback([&] {
    std::vector<VerificationEntry> entries = run_gradient_suite();
    for (const VerificationEntry& e : entries) {
      std::printf("%-26s %s\n", e.name.c_str(), e.report.summary().c_str());
    }
    if (!suite_passed(entries)) {
      throw NumericalError("gradient verification failed");
    }
    std::printf("all %zu checks passed\n", entries.size());
  });

  // ablate --------------------------------------------------------------
  TrainConfig acfg;
  ModelConfig amodel;
  std::vector<int> achannels = amodel.encoder_channels;
  std::string amanifest, aeval, aout;
  std::vector<std::string> amodes = {"d", "d+s", "d+s+cdd", "d+cdd"};
  std::vector<std::uint64_t> aseeds = {0, 1, 2};
  EvalConfig aecfg;
  CLI::App* ab_cmd = app.add_subcommand(
      "ablate", "Train and evaluate every loss mode over several seeds");
  ab_cmd->set_config("--config", "", "key=value config file (flags override)");
  ab_cmd->add_option("--manifest", amanifest, "Training manifest")->required();
  ab_cmd->add_option("--eval-manifest", aeval, "Evaluation manifest")
      ->required();
  ab_cmd->add_option("--out", aout, "Ablation CSV path")->required();
  ab_cmd->add_option("--epochs", acfg.epochs, "Epochs per run");
  ab_cmd->add_option("--batch", acfg.batch_size, "Batch size");
  ab_cmd->add_option("--lr0", acfg.lr0, "Initial learning rate");
  ab_cmd->add_option("--flip-prob", acfg.augment.flip_prob,
                     "Flip-augmentation probability");
  ab_cmd->add_option("--modes", amodes, "Loss modes to run")->delimiter(',');
  ab_cmd->add_option("--seeds", aseeds, "Seeds to run")->delimiter(',');
  add_model_options(ab_cmd, achannels, amodel);
  ab_cmd->callback([&] {
    amodel.encoder_channels = achannels;
    std::vector<LossMode> modes;
    for (const std::string& m : amodes) modes.push_back(parse_mode_or_throw(m));
    std::vector<StereoSample> train_set, eval_set;
    for (const std::string& p : load_manifest(amanifest)) {
      train_set.push_back(load_sample(p));
    }
    for (const std::string& p : load_manifest(aeval)) {
      eval_set.push_back(load_sample(p));
    }
    std::vector<AblationRow> rows = run_ablation(
        acfg, amodel, train_set, eval_set, modes, aseeds, aecfg, true);
    write_ablation_csv(aout, rows);
    for (LossMode m : modes) {
      std::vector<double> vals;
      for (const AblationRow& r : rows) {
        if (r.mode == m) vals.push_back(r.no_pp.abs_rel);
      }
      std::printf("%-8s median abs_rel %.6f\n", loss_mode_name(m),
                  median(vals));
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
