#include "semdepth/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "semdepth/error.hpp"
#include "semdepth/image_ops.hpp"
#include "semdepth/rng.hpp"

namespace semdepth {

void SceneConfig::validate() const {
  if (h < 16 || w < 16) {
    throw DataError("scene config: frame below 16x16");
  }
  if (min_objects < 0 || max_objects < min_objects) {
    throw DataError("scene config: bad object count range");
  }
  if (num_classes < 2) {
    throw DataError("scene config: need background + at least one class");
  }
  if (d_min < 1.0 || d_max < d_min) {
    throw DataError("scene config: bad disparity range");
  }
  if (d_max >= w / 4.0) {
    throw DataError("scene config: d_max must stay below w/4");
  }
  if (texture_octaves < 1 || texture_octaves > 6) {
    throw DataError("scene config: texture octaves outside [1, 6]");
  }
}

namespace {

// Quintic smoothstep; C2-continuous lattice interpolation.
double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  return static_cast<double>(hash_coords(seed, ix, iy) >> 11) * 0x1.0p-53;
}

// Value noise in [0,1], evaluable at fractional coordinates.
double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const double tx = fade(x - fx), ty = fade(y - fy);
  const double v00 = lattice(seed, ix, iy);
  const double v10 = lattice(seed, ix + 1, iy);
  const double v01 = lattice(seed, ix, iy + 1);
  const double v11 = lattice(seed, ix + 1, iy + 1);
  const double a = v00 + tx * (v10 - v00);
  const double b = v01 + tx * (v11 - v01);
  return a + ty * (b - a);
}

double octave_noise(std::uint64_t seed, double x, double y, int octaves) {
  static constexpr double kBaseWavelength = 12.0;
  double acc = 0.0, amp = 1.0, norm = 0.0, freq = 1.0 / kBaseWavelength;
  for (int o = 0; o < octaves; ++o) {
    acc += amp * value_noise(seed + static_cast<std::uint64_t>(o) * 0x9E37ull,
                             x * freq, y * freq);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return acc / norm;
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c, g = x;
  } else if (hp < 2) {
    r = x, g = c;
  } else if (hp < 3) {
    g = c, b = x;
  } else if (hp < 4) {
    g = x, b = c;
  } else if (hp < 5) {
    r = x, b = c;
  } else {
    r = c, b = x;
  }
  return {r + (v - c), g + (v - c), b + (v - c)};
}

// Classes get fixed, well-separated color families so the semantic decoder
// has a learnable appearance cue; per-layer jitter keeps instances distinct.
Rgb class_base_color(int cls, double jitter) {
  if (cls == 0) return hsv_to_rgb(0.34, 0.25, 0.45 + 0.1 * jitter);
  const double hue = std::fmod(0.08 + 0.618033988749895 * cls, 1.0);
  return hsv_to_rgb(hue, 0.55, 0.62 + 0.15 * jitter);
}

struct Layer {
  bool disk = false;
  int cls = 0;
  int disparity = 0;   // integral, see header note
  double cx = 0, cy = 0, half_w = 0, half_h = 0;
  std::uint64_t tex_seed = 0;
  double brightness = 0;  // per-layer jitter in [-1, 1]

  bool covers(double x, double y) const {
    if (disk) {
      const double dx = x - cx, dy = y - cy;
      return dx * dx + dy * dy <= half_h * half_h;
    }
    return std::abs(x - cx) <= half_w && std::abs(y - cy) <= half_h;
  }
};

float layer_color(const Layer& layer, int channel, double x, double y,
                  int octaves) {
  const double n = octave_noise(layer.tex_seed, x, y, octaves);
  const Rgb base = class_base_color(layer.cls, layer.brightness);
  const double channel_base = channel == 0 ? base.r : channel == 1 ? base.g
                                                                   : base.b;
  return static_cast<float>(
      std::clamp(channel_base * (0.55 + 0.6 * n), 0.0, 1.0));
}

}  // namespace

GeneratedScene generate_scene_full(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);

  const int d_bg = static_cast<int>(std::lround(cfg.d_min));

  // Background is layer 0; objects stack on top sorted far-to-near.
  std::vector<Layer> layers(1);
  layers[0].cls = 0;
  layers[0].disparity = d_bg;
  layers[0].tex_seed = rng.next();
  layers[0].brightness = rng.uniform(-1.0, 1.0);

  const int count = static_cast<int>(
      rng.uniform_int(cfg.min_objects, cfg.max_objects));
  for (int k = 0; k < count; ++k) {
    Layer obj;
    obj.disk = rng.bernoulli(0.5);
    obj.cls = cfg.num_classes == 2
                  ? 1
                  : static_cast<int>(rng.uniform_int(1, cfg.num_classes - 1));

    // The monocular depth cue: disparity tracks vertical position (lower in
    // frame = nearer), with mild jitter, and size tracks disparity.
    const double cy_frac = rng.uniform(0.2, 0.9);
    const double t = std::clamp(
        (cy_frac - 0.2) / 0.7 + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    obj.disparity = static_cast<int>(
        std::lround(cfg.d_min + (cfg.d_max - cfg.d_min) * t));
    const double near_scale =
        0.6 + 0.8 * (static_cast<double>(obj.disparity) / cfg.d_max);
    obj.half_h = (0.07 + 0.09 * rng.uniform()) * cfg.h * near_scale;
    obj.half_h = std::max(2.0, obj.half_h);
    obj.half_w = obj.disk ? obj.half_h
                          : obj.half_h * rng.uniform(0.8, 1.6);

    // Keep the object fully inside both views (its right-view copy sits
    // `disparity` pixels to the left); shrink if the frame is too tight.
    const double max_half_w = (cfg.w - obj.disparity - 4) / 2.0;
    if (obj.half_w > max_half_w) {
      if (max_half_w < 2.0) throw DataError("scene: object larger than frame");
      const double scale = max_half_w / obj.half_w;
      obj.half_w *= scale;
      obj.half_h *= scale;
    }
    const double x_lo = obj.disparity + obj.half_w + 1.0;
    const double x_hi = cfg.w - obj.half_w - 2.0;
    obj.cx = x_lo + (x_hi - x_lo) * rng.uniform();
    obj.cy = std::clamp(cy_frac * cfg.h, obj.half_h + 1.0,
                        cfg.h - obj.half_h - 2.0);
    obj.tex_seed = rng.next();
    obj.brightness = rng.uniform(-1.0, 1.0);
    layers.push_back(obj);
  }
  std::stable_sort(layers.begin() + 1, layers.end(),
                   [](const Layer& a, const Layer& b) {
                     return a.disparity < b.disparity;
                   });

  GeneratedScene out;
  StereoSample& s = out.sample;
  s.left = Tensor<float>(Shape{1, 3, cfg.h, cfg.w});
  s.right = Tensor<float>(Shape{1, 3, cfg.h, cfg.w});
  s.gt_disparity = Tensor<float>(Shape{1, 1, cfg.h, cfg.w});
  s.semantic.n = 1;
  s.semantic.h = cfg.h;
  s.semantic.w = cfg.w;
  s.semantic.num_classes = cfg.num_classes;
  s.semantic.labels.assign(static_cast<std::size_t>(cfg.h) * cfg.w, 0);
  s.calib.focal_px = 0.8 * cfg.w;
  s.calib.baseline_m = 0.54;
  s.calib.width_px = cfg.w;

  // Painter's algorithm per view; the per-pixel winning layer index drives
  // ground truth (left view) and the occlusion test (both views).
  std::vector<int> left_id(static_cast<std::size_t>(cfg.h) * cfg.w, 0);
  std::vector<int> right_id(left_id);
  for (int y = 0; y < cfg.h; ++y)
    for (int x = 0; x < cfg.w; ++x) {
      const std::size_t px = static_cast<std::size_t>(y) * cfg.w + x;
      for (std::size_t k = 1; k < layers.size(); ++k) {
        if (layers[k].covers(x, y)) left_id[px] = static_cast<int>(k);
        // Right view: layer appears shifted left by its disparity, i.e. the
        // right pixel x maps to layer coordinate x + d.
        if (layers[k].covers(x + layers[k].disparity, y)) {
          right_id[px] = static_cast<int>(k);
        }
      }
      const Layer& lv = layers[static_cast<std::size_t>(left_id[px])];
      const Layer& rv = layers[static_cast<std::size_t>(right_id[px])];
      for (int c = 0; c < 3; ++c) {
        s.left.at(0, c, y, x) =
            layer_color(lv, c, x, y, cfg.texture_octaves);
        s.right.at(0, c, y, x) =
            layer_color(rv, c, x + rv.disparity, y, cfg.texture_octaves);
      }
      s.gt_disparity.at(0, 0, y, x) = static_cast<float>(lv.disparity);
      s.semantic.labels[px] = lv.cls;
    }

  // Snap to the 8-bit grid the PPM codec stores. Corresponding left/right
  // texels carry identical values before snapping, so photometric equality
  // survives both quantization and a save/load round-trip.
  for (Tensor<float>* img : {&s.left, &s.right}) {
    for (float& v : img->values()) {
      v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
    }
  }

  out.occlusion.assign(left_id.size(), kPixelVisible);
  for (int y = 0; y < cfg.h; ++y)
    for (int x = 0; x < cfg.w; ++x) {
      const std::size_t px = static_cast<std::size_t>(y) * cfg.w + x;
      const int d = layers[static_cast<std::size_t>(left_id[px])].disparity;
      if (x - d < 0) {
        out.occlusion[px] = kPixelOutOfView;
      } else if (right_id[px - static_cast<std::size_t>(d)] != left_id[px]) {
        out.occlusion[px] = kPixelOccluded;
      }
    }
  return out;
}

StereoSample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  return generate_scene_full(cfg, seed).sample;
}

std::string generate_dataset(const SceneConfig& cfg, int count,
                             const std::string& out_dir) {
  cfg.validate();
  if (count <= 0) throw DataError("generate_dataset: count must be positive");
  std::filesystem::create_directories(out_dir);
  SplitMix64 base(cfg.seed);
  const std::string manifest_path =
      (std::filesystem::path(out_dir) / "manifest.txt").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw DataError(manifest_path + ": cannot open for writing");
  manifest << "# " << count << " scenes, " << cfg.w << "x" << cfg.h
           << ", seed " << cfg.seed << "\n";
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    const std::string prefix =
        (std::filesystem::path(out_dir) / name).string();
    save_sample(prefix,
                generate_scene(cfg, base.fork(static_cast<std::uint64_t>(i))
                                        .next()));
    manifest << name << "\n";
  }
  if (!manifest) throw DataError(manifest_path + ": write failed");
  return manifest_path;
}

std::pair<StereoSample, bool> augment(const StereoSample& sample,
                                      const AugmentConfig& cfg,
                                      std::uint64_t seed) {
  SplitMix64 rng(seed);
  const double gamma = rng.uniform(cfg.gamma_lo, cfg.gamma_hi);
  const double brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
  const double shift[3] = {rng.uniform(cfg.color_lo, cfg.color_hi),
                           rng.uniform(cfg.color_lo, cfg.color_hi),
                           rng.uniform(cfg.color_lo, cfg.color_hi)};
  const bool flip = rng.bernoulli(cfg.flip_prob);

  StereoSample out = sample;
  auto transform = [&](const Tensor<float>& img) {
    Tensor<float> t(img.shape());
    const Shape sh = img.shape();
    for (int c = 0; c < sh.c; ++c) {
      const float gain = static_cast<float>(brightness * shift[c]);
      for (int y = 0; y < sh.h; ++y)
        for (int x = 0; x < sh.w; ++x) {
          const float v = std::pow(img.at(0, c, y, x),
                                   static_cast<float>(gamma)) * gain;
          t.at(0, c, y, x) = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return t;
  };
  Tensor<float> left = transform(sample.left);
  Tensor<float> right = transform(sample.right);
  if (flip) {
    out.left = flip_horizontal(right);
    out.right = flip_horizontal(left);
  } else {
    out.left = std::move(left);
    out.right = std::move(right);
  }
  return {std::move(out), flip};
}

void save_sample(const std::string& prefix, const StereoSample& sample) {
  save_ppm(prefix + "_left.ppm", sample.left);
  save_ppm(prefix + "_right.ppm", sample.right);
  save_disparity_pgm(prefix + "_disp.pgm", sample.gt_disparity);
  save_label_pgm(prefix + "_sem.pgm", sample.semantic);
  save_calib(prefix + "_calib.txt", sample.calib);
}

StereoSample load_sample(const std::string& prefix) {
  StereoSample s;
  s.left = load_ppm(prefix + "_left.ppm");
  s.right = load_ppm(prefix + "_right.ppm");
  s.gt_disparity = load_disparity_pgm(prefix + "_disp.pgm");
  s.semantic = load_label_pgm(prefix + "_sem.pgm");
  s.calib = load_calib(prefix + "_calib.txt");
  const Shape want = s.left.shape();
  if (s.right.shape() != want ||
      s.gt_disparity.shape() != Shape{1, 1, want.h, want.w} ||
      s.semantic.h != want.h || s.semantic.w != want.w) {
    throw DataError(prefix + ": sample maps disagree on dimensions");
  }
  return s;
}

SplitResult split_manifest(const std::vector<std::string>& entries,
                           int train_count, int eval_count,
                           std::uint64_t seed) {
  if (train_count < 0 || eval_count < 0 ||
      static_cast<std::size_t>(train_count) + eval_count > entries.size()) {
    throw DataError("split: counts exceed manifest size");
  }
  std::vector<std::string> shuffled = entries;
  SplitMix64 rng(seed);
  deterministic_shuffle(shuffled, rng);
  SplitResult out;
  out.train.assign(shuffled.begin(), shuffled.begin() + train_count);
  out.eval.assign(shuffled.begin() + train_count,
                  shuffled.begin() + train_count + eval_count);
  return out;
}

}  // namespace semdepth
