#include "semdepth/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "semdepth/error.hpp"

namespace semdepth {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) {
      c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    }
    table[i] = c;
  }
  return table;
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != sizeof(T)) throw DataError(path + ": truncated checkpoint");
  return v;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t size) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const std::string& path,
                     const ModelParams<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  const auto& cfg = params.cfg;
  write_pod(out, static_cast<std::uint32_t>(cfg.num_levels()));
  for (int c : cfg.encoder_channels) {
    write_pod(out, static_cast<std::uint32_t>(c));
  }
  write_pod(out, static_cast<std::uint32_t>(cfg.num_classes));
  write_pod(out, cfg.d_max_fraction);
  write_pod(out, static_cast<std::uint32_t>(params.params.size()));
  for (const auto& [name, t] : params.params) {
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape s = t.shape();
    write_pod(out, static_cast<std::int32_t>(s.n));
    write_pod(out, static_cast<std::int32_t>(s.c));
    write_pod(out, static_cast<std::int32_t>(s.h));
    write_pod(out, static_cast<std::int32_t>(s.w));
    auto vals = t.values();
    const std::size_t bytes = vals.size() * sizeof(float);
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(bytes));
    write_pod(out, crc32(vals.data(), bytes));
  }
  if (!out) throw DataError(path + ": write failed");
}

ModelParams<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path + ": not a checkpoint (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(version));
  }
  ModelConfig cfg;
  const auto levels = read_pod<std::uint32_t>(in, path);
  if (levels == 0 || levels > 16) {
    throw DataError(path + ": implausible level count");
  }
  cfg.encoder_channels.resize(levels);
  for (auto& c : cfg.encoder_channels) {
    c = static_cast<int>(read_pod<std::uint32_t>(in, path));
  }
  cfg.num_classes = static_cast<int>(read_pod<std::uint32_t>(in, path));
  cfg.d_max_fraction = read_pod<double>(in, path);
  cfg.validate();

  ModelParams<float> mp;
  mp.cfg = cfg;
  const auto count = read_pod<std::uint32_t>(in, path);
  mp.params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    if (name_len > 256) throw DataError(path + ": implausible name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (in.gcount() != static_cast<std::streamsize>(name_len)) {
      throw DataError(path + ": truncated checkpoint");
    }
    Shape s;
    s.n = read_pod<std::int32_t>(in, path);
    s.c = read_pod<std::int32_t>(in, path);
    s.h = read_pod<std::int32_t>(in, path);
    s.w = read_pod<std::int32_t>(in, path);
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
      throw DataError(path + ": bad shape in record '" + name + "'");
    }
    std::vector<float> vals(static_cast<std::size_t>(s.numel()));
    const std::size_t bytes = vals.size() * sizeof(float);
    in.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes) {
      throw DataError(path + ": truncated checkpoint");
    }
    const auto stored_crc = read_pod<std::uint32_t>(in, path);
    if (crc32(vals.data(), bytes) != stored_crc) {
      throw DataError(path + ": checksum mismatch in record '" + name + "'");
    }
    mp.params.emplace_back(name, Tensor<float>(s, std::move(vals)));
  }
  return mp;
}

}  // namespace semdepth
