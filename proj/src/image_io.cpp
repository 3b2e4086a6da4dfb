#include "semdepth/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "semdepth/error.hpp"

namespace semdepth {

namespace {

// Reads one whitespace-delimited header token, treating `#` to end-of-line as
// a comment (netpbm allows comments anywhere in the header).
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) {
    throw DataError(path + ": truncated header");
  }
  return tok;
}

int header_int(std::istream& in, const std::string& path) {
  const std::string tok = next_token(in, path);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ": bad header field '" + tok + "'");
  }
}

// Header = magic + width + height + maxval, then a single whitespace byte
// before the binary payload (consumed by the unformatted reads that follow).
struct PnmHeader {
  int width = 0, height = 0, maxval = 0;
};

PnmHeader read_header(std::istream& in, const std::string& path,
                      const std::string& magic, int want_maxval) {
  const std::string m = next_token(in, path);
  if (m != magic) {
    throw DataError(path + ": expected " + magic + " header, got '" + m + "'");
  }
  PnmHeader h;
  h.width = header_int(in, path);
  h.height = header_int(in, path);
  h.maxval = header_int(in, path);
  if (h.maxval != want_maxval) {
    throw DataError(path + ": expected maxval " + std::to_string(want_maxval) +
                    ", got " + std::to_string(h.maxval));
  }
  if (h.width <= 0 || h.height <= 0) {
    throw DataError(path + ": degenerate dimensions");
  }
  return h;
}

std::vector<std::uint8_t> read_payload(std::istream& in, const std::string& path,
                                       std::size_t bytes) {
  std::vector<std::uint8_t> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw DataError(path + ": truncated payload");
  }
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  return in;
}

}  // namespace

void save_ppm(const std::string& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw DataError(path + ": PPM wants a (1,3,H,W) tensor, got " + s.str());
  }
  std::ofstream out = open_out(path);
  out << "P6\n" << s.w << " " << s.h << "\n255\n";
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(s.spatial()) * 3);
  std::size_t i = 0;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
        buf[i++] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError(path + ": write failed");
}

Tensor<float> load_ppm(const std::string& path) {
  std::ifstream in = open_in(path);
  const PnmHeader h = read_header(in, path, "P6", 255);
  const auto buf =
      read_payload(in, path, static_cast<std::size_t>(h.width) * h.height * 3);
  Tensor<float> img(Shape{1, 3, h.height, h.width});
  std::size_t i = 0;
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = static_cast<float>(buf[i++]) / 255.0f;
      }
  return img;
}

void save_disparity_pgm(const std::string& path,
                        const Tensor<float>& disparity) {
  const Shape s = disparity.shape();
  if (s.n != 1 || s.c != 1) {
    throw DataError(path + ": disparity wants a (1,1,H,W) tensor, got " +
                    s.str());
  }
  std::ofstream out = open_out(path);
  out << "P5\n" << s.w << " " << s.h << "\n65535\n";
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(s.spatial()) * 2);
  std::size_t i = 0;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      const float d = disparity.at(0, 0, y, x);
      if (d < 0.0f || !std::isfinite(d)) {
        throw DataError(path + ": negative or non-finite disparity");
      }
      const long stored = std::lround(d * 256.0f);
      if (stored > 65535) {
        throw DataError(path + ": disparity " + std::to_string(d) +
                        " px exceeds the 16-bit x256 encoding");
      }
      buf[i++] = static_cast<std::uint8_t>(stored >> 8);
      buf[i++] = static_cast<std::uint8_t>(stored & 0xFF);
    }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError(path + ": write failed");
}

Tensor<float> load_disparity_pgm(const std::string& path) {
  std::ifstream in = open_in(path);
  const PnmHeader h = read_header(in, path, "P5", 65535);
  const auto buf =
      read_payload(in, path, static_cast<std::size_t>(h.width) * h.height * 2);
  Tensor<float> d(Shape{1, 1, h.height, h.width});
  std::size_t i = 0;
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x) {
      const int stored = (static_cast<int>(buf[i]) << 8) | buf[i + 1];
      i += 2;
      d.at(0, 0, y, x) = static_cast<float>(stored) / 256.0f;
    }
  return d;
}

void save_label_pgm(const std::string& path, const SemanticTarget& labels) {
  if (labels.n != 1 || labels.h <= 0 || labels.w <= 0 ||
      labels.labels.size() !=
          static_cast<std::size_t>(labels.h) * labels.w) {
    throw DataError(path + ": malformed label map");
  }
  std::ofstream out = open_out(path);
  out << "P5\n" << labels.w << " " << labels.h << "\n255\n";
  std::vector<std::uint8_t> buf(labels.labels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const int v = labels.labels[i];
    if (v < 0 || v > 255) {
      throw DataError(path + ": label " + std::to_string(v) +
                      " outside 8-bit range");
    }
    buf[i] = static_cast<std::uint8_t>(v);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError(path + ": write failed");
}

SemanticTarget load_label_pgm(const std::string& path) {
  std::ifstream in = open_in(path);
  const PnmHeader h = read_header(in, path, "P5", 255);
  const auto buf =
      read_payload(in, path, static_cast<std::size_t>(h.width) * h.height);
  SemanticTarget t;
  t.n = 1;
  t.h = h.height;
  t.w = h.width;
  t.labels.assign(buf.begin(), buf.end());
  return t;
}

void save_calib(const std::string& path, const Calib& calib) {
  std::ofstream out = open_out(path);
  out << "focal_px=" << calib.focal_px << "\n"
      << "baseline_m=" << calib.baseline_m << "\n"
      << "width_px=" << calib.width_px << "\n";
  if (!out) throw DataError(path + ": write failed");
}

Calib load_calib(const std::string& path) {
  std::ifstream in = open_in(path);
  Calib c;
  bool got_f = false, got_b = false, got_w = false;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    double value = 0;
    try {
      value = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw DataError(path + ": bad value in line '" + line + "'");
    }
    if (key == "focal_px") {
      c.focal_px = value;
      got_f = true;
    } else if (key == "baseline_m") {
      c.baseline_m = value;
      got_b = true;
    } else if (key == "width_px") {
      c.width_px = value;
      got_w = true;
    }
  }
  if (!got_f || !got_b || !got_w) {
    throw DataError(path + ": missing calibration keys");
  }
  return c;
}

std::vector<std::string> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  std::vector<std::string> entries;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::string entry = line.substr(b, e - b + 1);
    if (!seen.insert(entry).second) {
      throw DataError(path + ": duplicate entry '" + entry + "'");
    }
    std::filesystem::path p(entry);
    if (p.is_relative()) p = dir / p;
    const std::string prefix = p.string();
    if (!std::filesystem::exists(prefix + "_left.ppm")) {
      throw DataError(path + ": missing files for entry '" + entry + "'");
    }
    entries.push_back(prefix);
  }
  if (entries.empty()) {
    throw DataError(path + ": empty manifest");
  }
  return entries;
}

}  // namespace semdepth
