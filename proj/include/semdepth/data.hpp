#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semdepth/image_io.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/tensor.hpp"

// Synthetic rectified-stereo scenes with exact disparity and semantic ground
// truth: a textured background plane plus textured rectangles/disks at
// sampled disparities, composited far-to-near in both views. Disparities are
// integral, so the right view re-renders each layer at exactly shifted
// texture coordinates and photometric consistency holds bit-for-bit on
// non-occluded pixels.

namespace semdepth {

struct StereoSample {
  Tensor<float> left, right;   // (1,3,H,W), values in [0,1]
  Tensor<float> gt_disparity;  // (1,1,H,W) pixels, 0 = invalid
  SemanticTarget semantic;     // left-view labels; num_classes from generator
  Calib calib;
};

struct SceneConfig {
  int h = 64, w = 128;
  int min_objects = 4, max_objects = 7;
  int num_classes = 4;  // class 0 = background, objects drawn from [1, C)
  double d_min = 2.0, d_max = 8.0;  // disparity range in pixels
  int texture_octaves = 2;
  std::uint64_t seed = 0;  // corpus base seed; per-scene seeds derive from it

  void validate() const;
};

// Per-pixel visibility of the left view against the right view.
enum : std::uint8_t {
  kPixelVisible = 0,   // right view shows the same layer
  kPixelOccluded = 1,  // right view shows a nearer layer
  kPixelOutOfView = 2  // corresponding right column is left of the frame
};

struct GeneratedScene {
  StereoSample sample;
  std::vector<std::uint8_t> occlusion;  // (h*w), values above
};

GeneratedScene generate_scene_full(const SceneConfig& cfg, std::uint64_t seed);
StereoSample generate_scene(const SceneConfig& cfg, std::uint64_t seed);

// Writes `count` scenes (seeded from cfg.seed) plus manifest.txt to out_dir;
// returns the manifest path.
std::string generate_dataset(const SceneConfig& cfg, int count,
                             const std::string& out_dir);

struct AugmentConfig {
  double gamma_lo = 0.8, gamma_hi = 1.2;
  double brightness_lo = 0.5, brightness_hi = 2.0;
  double color_lo = 0.8, color_hi = 1.2;
  double flip_prob = 0.5;
};

// Identical photometric jitter on both views; with probability flip_prob the
// pair is mirrored and swapped (the mirrored right image becomes the new
// reference). The returned flag tells the loss to drop semantic supervision;
// gt maps in the returned sample are stale when it is set.
std::pair<StereoSample, bool> augment(const StereoSample& sample,
                                      const AugmentConfig& cfg,
                                      std::uint64_t seed);

// prefix_{left,right}.ppm, prefix_disp.pgm, prefix_sem.pgm, prefix_calib.txt
void save_sample(const std::string& prefix, const StereoSample& sample);
StereoSample load_sample(const std::string& prefix);

struct SplitResult {
  std::vector<std::string> train, eval;
};

// Seeded shuffle, then the first train_count entries train and the next
// eval_count evaluate.
SplitResult split_manifest(const std::vector<std::string>& entries,
                           int train_count, int eval_count,
                           std::uint64_t seed);

}  // namespace semdepth
