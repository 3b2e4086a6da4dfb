#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "semdepth/checkpoint.hpp"
#include "semdepth/image_io.hpp"
#include "semdepth/network.hpp"
#include "semdepth/rng.hpp"

using namespace semdepth;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(bool(out));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("PPM round-trips 8-bit-grid images bit-exactly") {
  TempDir dir("semdepth_test_io_ppm");
  Tensor<float> img(Shape{1, 3, 5, 7});
  SplitMix64 rng(1);
  for (float& v : img.values()) {
    v = static_cast<float>(rng.uniform_int(0, 255)) / 255.0f;
  }
  const std::string path = dir.file("img.ppm");
  save_ppm(path, img);
  Tensor<float> back = load_ppm(path);
  REQUIRE(back.shape() == img.shape());
  auto a = img.values(), b = back.values();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("PPM quantizes off-grid values by rounding") {
  TempDir dir("semdepth_test_io_ppmq");
  Tensor<float> img(Shape{1, 3, 1, 1});
  img.at(0, 0, 0, 0) = 0.5f;    // 127.5 -> 128
  img.at(0, 1, 0, 0) = 1.2f;    // clamps to 255
  img.at(0, 2, 0, 0) = -0.3f;   // clamps to 0
  const std::string path = dir.file("img.ppm");
  save_ppm(path, img);
  Tensor<float> back = load_ppm(path);
  CHECK(back.at(0, 0, 0, 0) == 128.0f / 255.0f);
  CHECK(back.at(0, 1, 0, 0) == 1.0f);
  CHECK(back.at(0, 2, 0, 0) == 0.0f);
}

TEST_CASE("PPM rejects wrong shapes and missing files") {
  TempDir dir("semdepth_test_io_ppmbad");
  CHECK_THROWS_AS(save_ppm(dir.file("x.ppm"), Tensor<float>(Shape{1, 1, 4, 4})),
                  DataError);
  CHECK_THROWS_AS(load_ppm(dir.file("absent.ppm")), DataError);
}

TEST_CASE("disparity 1.0 px is stored as big-endian 256") {
  TempDir dir("semdepth_test_io_dbe");
  Tensor<float> d(Shape{1, 1, 1, 1});
  d.at(0, 0, 0, 0) = 1.0f;
  const std::string path = dir.file("d.pgm");
  save_disparity_pgm(path, d);
  const auto bytes = slurp(path);
  REQUIRE(bytes.size() >= 2);
  CHECK(bytes[bytes.size() - 2] == 0x01);  // 256 = 0x0100
  CHECK(bytes[bytes.size() - 1] == 0x00);
}

TEST_CASE("disparity round-trip error stays within half a step") {
  TempDir dir("semdepth_test_io_drt");
  Tensor<float> d(Shape{1, 1, 4, 6});
  SplitMix64 rng(2);
  for (float& v : d.values()) v = static_cast<float>(rng.uniform(0.0, 20.0));
  d.values()[0] = 0.0f;  // the invalid marker round-trips too
  const std::string path = dir.file("d.pgm");
  save_disparity_pgm(path, d);
  Tensor<float> back = load_disparity_pgm(path);
  auto a = d.values(), b = back.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i] - b[i]) <= 1.0f / 512.0f + 1e-6f);
  }
  CHECK(back.values()[0] == 0.0f);

  // Exact multiples of 1/256 are lossless.
  Tensor<float> q(Shape{1, 1, 1, 3});
  q.values()[0] = 3.0f;
  q.values()[1] = 0.25f;
  q.values()[2] = 100.0f + 1.0f / 256.0f;
  save_disparity_pgm(path, q);
  Tensor<float> qb = load_disparity_pgm(path);
  for (std::size_t i = 0; i < 3; ++i) CHECK(qb.values()[i] == q.values()[i]);
}

TEST_CASE("disparity codec rejects unencodable values") {
  TempDir dir("semdepth_test_io_dbad");
  Tensor<float> neg(Shape{1, 1, 1, 1});
  neg.at(0, 0, 0, 0) = -0.5f;
  CHECK_THROWS_AS(save_disparity_pgm(dir.file("n.pgm"), neg), DataError);
  Tensor<float> big(Shape{1, 1, 1, 1});
  big.at(0, 0, 0, 0) = 300.0f;  // 300*256 > 65535
  CHECK_THROWS_AS(save_disparity_pgm(dir.file("b.pgm"), big), DataError);
  Tensor<float> nan(Shape{1, 1, 1, 1});
  nan.at(0, 0, 0, 0) = std::nanf("");
  CHECK_THROWS_AS(save_disparity_pgm(dir.file("x.pgm"), nan), DataError);
}

TEST_CASE("label maps round-trip including the ignore id") {
  TempDir dir("semdepth_test_io_lbl");
  SemanticTarget t;
  t.n = 1;
  t.h = 2;
  t.w = 3;
  t.num_classes = 4;
  t.labels = {0, 1, 3, 255, 2, 0};
  const std::string path = dir.file("l.pgm");
  save_label_pgm(path, t);
  SemanticTarget back = load_label_pgm(path);
  CHECK(back.h == 2);
  CHECK(back.w == 3);
  CHECK(back.labels == t.labels);
  CHECK(back.num_classes == 0);  // caller fills this from its config

  SemanticTarget bad = t;
  bad.labels[0] = 256;
  CHECK_THROWS_AS(save_label_pgm(dir.file("bad.pgm"), bad), DataError);
}

TEST_CASE("PGM loaders reject mismatched headers") {
  TempDir dir("semdepth_test_io_hdr");
  // A PPM where a label map is expected, and v.v.
  Tensor<float> img(Shape{1, 3, 2, 2});
  save_ppm(dir.file("img.ppm"), img);
  CHECK_THROWS_AS(load_label_pgm(dir.file("img.ppm")), DataError);
  SemanticTarget t;
  t.n = 1;
  t.h = 2;
  t.w = 2;
  t.labels = {0, 1, 1, 0};
  save_label_pgm(dir.file("l.pgm"), t);
  CHECK_THROWS_AS(load_ppm(dir.file("l.pgm")), DataError);
  CHECK_THROWS_AS(load_disparity_pgm(dir.file("l.pgm")), DataError);  // maxval
}

TEST_CASE("calibration text round-trips and tolerates comments") {
  TempDir dir("semdepth_test_io_cal");
  Calib c;
  c.focal_px = 102.4;
  c.baseline_m = 0.54;
  c.width_px = 128;
  const std::string path = dir.file("calib.txt");
  save_calib(path, c);
  Calib back = load_calib(path);
  CHECK(back.focal_px == c.focal_px);
  CHECK(back.baseline_m == c.baseline_m);
  CHECK(back.width_px == c.width_px);

  {
    std::ofstream out(dir.file("manual.txt"));
    out << "# rig description\n"
        << "focal_px=100.5  # px\n"
        << "\n"
        << "baseline_m=0.54\n"
        << "width_px=512\n";
  }
  Calib manual = load_calib(dir.file("manual.txt"));
  CHECK(manual.focal_px == 100.5);
  CHECK(manual.width_px == 512.0);

  {
    std::ofstream out(dir.file("missing.txt"));
    out << "focal_px=100\n";
  }
  CHECK_THROWS_AS(load_calib(dir.file("missing.txt")), DataError);
}

TEST_CASE("manifests resolve entries and reject malformed lists") {
  TempDir dir("semdepth_test_io_man");
  // Two minimal sample stubs (only the left image is probed).
  Tensor<float> img(Shape{1, 3, 2, 2});
  save_ppm(dir.file("a_left.ppm"), img);
  save_ppm(dir.file("b_left.ppm"), img);

  {
    std::ofstream out(dir.file("manifest.txt"));
    out << "# corpus\n\n  a  \nb # trailing comment\n";
  }
  const auto entries = load_manifest(dir.file("manifest.txt"));
  REQUIRE(entries.size() == 2);
  CHECK(entries[0] == (dir.path / "a").string());
  CHECK(entries[1] == (dir.path / "b").string());

  {
    std::ofstream out(dir.file("dup.txt"));
    out << "a\na\n";
  }
  CHECK_THROWS_AS(load_manifest(dir.file("dup.txt")), DataError);
  {
    std::ofstream out(dir.file("ghost.txt"));
    out << "a\nc\n";
  }
  CHECK_THROWS_AS(load_manifest(dir.file("ghost.txt")), DataError);
  {
    std::ofstream out(dir.file("empty.txt"));
    out << "# nothing here\n";
  }
  CHECK_THROWS_AS(load_manifest(dir.file("empty.txt")), DataError);
}

TEST_CASE("crc32 matches the classic check vector") {
  const char* s = "123456789";
  CHECK(crc32(s, 9) == 0xCBF43926u);
}

TEST_CASE("checkpoints round-trip parameters bit-exactly") {
  TempDir dir("semdepth_test_io_ckpt");
  ModelConfig cfg;
  cfg.encoder_channels = {8, 12};
  cfg.num_classes = 3;
  cfg.d_max_fraction = 0.25;
  ModelParams<float> mp = init_params<float>(cfg, 5);
  const std::string path = dir.file("model.bin");
  save_checkpoint(path, mp);
  ModelParams<float> back = load_checkpoint(path);
  CHECK(back.cfg == cfg);
  REQUIRE(back.params.size() == mp.params.size());
  for (std::size_t i = 0; i < mp.params.size(); ++i) {
    CHECK(back.params[i].first == mp.params[i].first);
    auto a = mp.params[i].second.values();
    auto b = back.params[i].second.values();
    REQUIRE(a.size() == b.size());
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
}

TEST_CASE("checkpoint loader detects corruption") {
  TempDir dir("semdepth_test_io_ckptbad");
  ModelConfig cfg;
  cfg.encoder_channels = {8};
  ModelParams<float> mp = init_params<float>(cfg, 6);
  const std::string path = dir.file("model.bin");
  save_checkpoint(path, mp);
  const auto good = slurp(path);

  auto flipped = good;
  flipped[flipped.size() - 6] ^= 0x40;  // payload byte of the last record
  spit(dir.file("flip.bin"), flipped);
  CHECK_THROWS_AS(load_checkpoint(dir.file("flip.bin")), DataError);

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  spit(dir.file("trunc.bin"), truncated);
  CHECK_THROWS_AS(load_checkpoint(dir.file("trunc.bin")), DataError);

  auto badmagic = good;
  badmagic[0] = 'X';
  spit(dir.file("magic.bin"), badmagic);
  CHECK_THROWS_AS(load_checkpoint(dir.file("magic.bin")), DataError);
}
