#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "semdepth/data.hpp"
#include "semdepth/image_io.hpp"

using namespace semdepth;

namespace {

SceneConfig small_config(std::uint64_t seed = 0) {
  SceneConfig cfg;
  cfg.h = 16;
  cfg.w = 32;
  cfg.min_objects = 2;
  cfg.max_objects = 3;
  cfg.num_classes = 3;
  cfg.d_min = 2.0;
  cfg.d_max = 6.0;
  cfg.texture_octaves = 2;  // pinned so fixtures survive default changes
  cfg.seed = seed;
  return cfg;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

bool same_floats(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

TEST_CASE("an empty scene is a pure background plane") {
  SceneConfig cfg = small_config();
  cfg.min_objects = cfg.max_objects = 0;
  GeneratedScene gs = generate_scene_full(cfg, 3);
  const StereoSample& s = gs.sample;

  for (float v : s.gt_disparity.values()) CHECK(v == 2.0f);
  for (int l : s.semantic.labels) CHECK(l == 0);

  // The right view is the same plane photographed 2 px to the right.
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < cfg.h; ++y)
      for (int x = 2; x < cfg.w; ++x) {
        CHECK(s.left.at(0, c, y, x) == s.right.at(0, c, y, x - 2));
      }
  for (int y = 0; y < cfg.h; ++y)
    for (int x = 0; x < cfg.w; ++x) {
      const std::uint8_t o = gs.occlusion[static_cast<std::size_t>(y) * cfg.w + x];
      CHECK(o == (x < 2 ? kPixelOutOfView : kPixelVisible));
    }
}

TEST_CASE("visible pixels match across views exactly, 20 scenes") {
  const SceneConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GeneratedScene gs = generate_scene_full(cfg, seed);
    const StereoSample& s = gs.sample;
    int visible = 0;
    for (int y = 0; y < cfg.h; ++y)
      for (int x = 0; x < cfg.w; ++x) {
        const std::size_t px = static_cast<std::size_t>(y) * cfg.w + x;
        const float df = s.gt_disparity.at(0, 0, y, x);
        CHECK(df == std::round(df));  // disparities are integral
        if (gs.occlusion[px] != kPixelVisible) continue;
        ++visible;
        const int d = static_cast<int>(df);
        REQUIRE(x - d >= 0);
        for (int c = 0; c < 3; ++c) {
          CHECK(s.left.at(0, c, y, x) == s.right.at(0, c, y, x - d));
        }
      }
    CHECK(visible > cfg.h * cfg.w / 2);  // most of the frame must be usable
  }
}

TEST_CASE("scene generation is bit-deterministic in the seed") {
  const SceneConfig cfg = small_config();
  GeneratedScene a = generate_scene_full(cfg, 11);
  GeneratedScene b = generate_scene_full(cfg, 11);
  CHECK(same_floats(a.sample.left.values(), b.sample.left.values()));
  CHECK(same_floats(a.sample.right.values(), b.sample.right.values()));
  CHECK(same_floats(a.sample.gt_disparity.values(),
                    b.sample.gt_disparity.values()));
  CHECK(a.sample.semantic.labels == b.sample.semantic.labels);
  CHECK(a.occlusion == b.occlusion);

  GeneratedScene c = generate_scene_full(cfg, 12);
  CHECK_FALSE(same_floats(a.sample.left.values(), c.sample.left.values()));
}

TEST_CASE("a lone rectangle occludes exactly delta-d columns per covered row") {
  SceneConfig cfg = small_config();
  cfg.min_objects = cfg.max_objects = 1;
  cfg.num_classes = 2;

  bool found_rect = false;
  for (std::uint64_t seed = 0; seed < 60 && !found_rect; ++seed) {
    GeneratedScene gs = generate_scene_full(cfg, seed);
    const StereoSample& s = gs.sample;
    int x0 = cfg.w, x1 = -1, y0 = cfg.h, y1 = -1;
    for (int y = 0; y < cfg.h; ++y)
      for (int x = 0; x < cfg.w; ++x)
        if (s.semantic.at(0, y, x) == 1) {
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    if (x1 < 0) continue;  // object landed off the sampled pixel grid
    bool bbox_full = true;
    for (int y = y0; y <= y1 && bbox_full; ++y)
      for (int x = x0; x <= x1; ++x)
        if (s.semantic.at(0, y, x) != 1) {
          bbox_full = false;
          break;
        }
    if (!bbox_full) continue;  // a disk; try the next seed
    found_rect = true;

    const int d_bg = static_cast<int>(s.gt_disparity.at(0, 0, 0, 0));
    const int d_obj = static_cast<int>(s.gt_disparity.at(0, 0, y0, x0));
    REQUIRE(d_obj >= d_bg);
    std::int64_t occluded = 0;
    for (std::uint8_t o : gs.occlusion)
      if (o == kPixelOccluded) ++occluded;
    // Per covered row the shadow is delta-d columns wide, capped by the
    // rectangle's own width when the jump outruns it.
    const std::int64_t band = std::min(d_obj - d_bg, x1 - x0 + 1);
    CHECK(occluded == band * (y1 - y0 + 1));
  }
  CHECK(found_rect);
}

TEST_CASE("samples survive a save/load round trip") {
  TempDir dir("semdepth_test_data_rt");
  const StereoSample s = generate_scene(small_config(), 17);
  const std::string prefix = (dir.path / "sample").string();
  save_sample(prefix, s);
  StereoSample r = load_sample(prefix);

  // Images live on the 8-bit grid, so PPM quantization is the identity.
  CHECK(same_floats(s.left.values(), r.left.values()));
  CHECK(same_floats(s.right.values(), r.right.values()));
  // Integral disparities are exact under the 1/256 encoding.
  CHECK(same_floats(s.gt_disparity.values(), r.gt_disparity.values()));
  CHECK(s.semantic.labels == r.semantic.labels);
  CHECK(r.calib.focal_px == s.calib.focal_px);
  CHECK(r.calib.baseline_m == s.calib.baseline_m);
  CHECK(r.calib.width_px == s.calib.width_px);
}

TEST_CASE("augment with collapsed ranges is a bitwise no-op") {
  const StereoSample s = generate_scene(small_config(), 19);
  AugmentConfig cfg;
  cfg.gamma_lo = cfg.gamma_hi = 1.0;
  cfg.brightness_lo = cfg.brightness_hi = 1.0;
  cfg.color_lo = cfg.color_hi = 1.0;
  cfg.flip_prob = 0.0;
  auto [out, flipped] = augment(s, cfg, 23);
  CHECK_FALSE(flipped);
  CHECK(same_floats(out.left.values(), s.left.values()));
  CHECK(same_floats(out.right.values(), s.right.values()));
}

TEST_CASE("gamma-only augmentation matches the closed form") {
  StereoSample s = generate_scene(small_config(), 29);
  for (float& v : s.left.values()) v = 0.25f;
  AugmentConfig cfg;
  cfg.gamma_lo = cfg.gamma_hi = 2.0;
  cfg.brightness_lo = cfg.brightness_hi = 1.0;
  cfg.color_lo = cfg.color_hi = 1.0;
  cfg.flip_prob = 0.0;
  auto [out, flipped] = augment(s, cfg, 31);
  CHECK_FALSE(flipped);
  for (float v : out.left.values())
    CHECK(v == doctest::Approx(0.0625).epsilon(1e-6));
}

TEST_CASE("augmentation changes pixels but never the ground truth") {
  const StereoSample s = generate_scene(small_config(), 37);
  AugmentConfig cfg;  // full default jitter
  cfg.flip_prob = 0.0;
  auto [out, flipped] = augment(s, cfg, 41);
  CHECK_FALSE(flipped);
  CHECK_FALSE(same_floats(out.left.values(), s.left.values()));
  CHECK(same_floats(out.gt_disparity.values(), s.gt_disparity.values()));
  CHECK(out.semantic.labels == s.semantic.labels);
}

TEST_CASE("a forced flip mirrors and swaps the pair") {
  const StereoSample s = generate_scene(small_config(), 43);
  AugmentConfig cfg;
  cfg.gamma_lo = cfg.gamma_hi = 1.0;
  cfg.brightness_lo = cfg.brightness_hi = 1.0;
  cfg.color_lo = cfg.color_hi = 1.0;
  cfg.flip_prob = 1.0;
  auto [once, f1] = augment(s, cfg, 47);
  CHECK(f1);
  CHECK(same_floats(once.left.values(), flip_horizontal(s.right).values()));
  CHECK(same_floats(once.right.values(), flip_horizontal(s.left).values()));
  // Ground truth rides along untouched (stale by contract).
  CHECK(same_floats(once.gt_disparity.values(), s.gt_disparity.values()));

  auto [twice, f2] = augment(once, cfg, 53);
  CHECK(f2);
  CHECK(same_floats(twice.left.values(), s.left.values()));
  CHECK(same_floats(twice.right.values(), s.right.values()));
}

TEST_CASE("split_manifest partitions deterministically") {
  std::vector<std::string> entries;
  for (int i = 0; i < 200; ++i) entries.push_back("s" + std::to_string(i));
  SplitResult a = split_manifest(entries, 160, 40, 7);
  SplitResult b = split_manifest(entries, 160, 40, 7);
  CHECK(a.train == b.train);
  CHECK(a.eval == b.eval);
  REQUIRE(a.train.size() == 160);
  REQUIRE(a.eval.size() == 40);

  std::set<std::string> all(a.train.begin(), a.train.end());
  all.insert(a.eval.begin(), a.eval.end());
  CHECK(all.size() == 200);  // disjoint and exhaustive
  CHECK(all == std::set<std::string>(entries.begin(), entries.end()));
  CHECK(a.train != std::vector<std::string>(entries.begin(),
                                            entries.begin() + 160));

  CHECK_THROWS_AS(split_manifest(entries, 180, 40, 7), DataError);
}

TEST_CASE("generate_dataset writes loadable scenes plus a manifest") {
  TempDir dir("semdepth_test_data_gen");
  SceneConfig cfg = small_config(99);
  const std::string manifest = generate_dataset(cfg, 3, dir.path.string());
  CHECK(std::filesystem::exists(manifest));
  const std::vector<std::string> prefixes = load_manifest(manifest);
  REQUIRE(prefixes.size() == 3);
  for (const auto& p : prefixes) {
    StereoSample s = load_sample(p);
    CHECK(s.left.shape() == Shape{1, 3, cfg.h, cfg.w});
  }
  // Scenes with different indices must differ.
  StereoSample s0 = load_sample(prefixes[0]);
  StereoSample s1 = load_sample(prefixes[1]);
  CHECK_FALSE(same_floats(s0.left.values(), s1.left.values()));
}

TEST_CASE("scene config validation rejects each bad field") {
  auto expect_throw = [](SceneConfig cfg) {
    CHECK_THROWS_AS(cfg.validate(), DataError);
  };
  SceneConfig ok = small_config();
  CHECK_NOTHROW(ok.validate());
  SceneConfig c = ok;
  c.h = 8;
  expect_throw(c);
  c = ok;
  c.min_objects = 3;
  c.max_objects = 2;
  expect_throw(c);
  c = ok;
  c.num_classes = 1;
  expect_throw(c);
  c = ok;
  c.d_min = 0.5;
  expect_throw(c);
  c = ok;
  c.d_max = 8.0;  // w/4 with w=32
  expect_throw(c);
  c = ok;
  c.texture_octaves = 0;
  expect_throw(c);
}
