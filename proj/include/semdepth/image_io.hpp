#pragma once

#include <string>
#include <vector>

#include "semdepth/losses.hpp"
#include "semdepth/tensor.hpp"

// Raster file I/O in stereo-benchmark conventions: 8-bit binary PPM for RGB,
// 16-bit big-endian PGM for disparity (value = round(px * 256), 0 = invalid),
// 8-bit PGM for label maps (255 = ignore), key=value text for calibration,
// and plain-text manifests listing sample prefixes.

namespace semdepth {

struct Calib {
  double focal_px = 0;
  double baseline_m = 0;
  double width_px = 0;
};

// (1,3,H,W) in [0,1] <-> PPM P6 maxval 255. Values are quantized with
// round(v*255) on save; loading maps back to v/255.
void save_ppm(const std::string& path, const Tensor<float>& image);
Tensor<float> load_ppm(const std::string& path);

// (1,1,H,W) disparity in pixels <-> PGM P5 maxval 65535, big-endian samples.
// Stored value = round(d*256); 0 marks invalid; d > 65535/256 is unencodable.
void save_disparity_pgm(const std::string& path, const Tensor<float>& disparity);
Tensor<float> load_disparity_pgm(const std::string& path);

// Label map <-> PGM P5 maxval 255; id 255 = ignore. num_classes is not part
// of the file; the loader leaves it 0 for the caller to fill from its config.
void save_label_pgm(const std::string& path, const SemanticTarget& labels);
SemanticTarget load_label_pgm(const std::string& path);

void save_calib(const std::string& path, const Calib& calib);
Calib load_calib(const std::string& path);

// One sample prefix per line; blank lines and `#` comments skipped. Relative
// prefixes are resolved against the manifest's directory. Rejects empty
// manifests, duplicates, and prefixes whose left image is missing.
std::vector<std::string> load_manifest(const std::string& path);

}  // namespace semdepth
