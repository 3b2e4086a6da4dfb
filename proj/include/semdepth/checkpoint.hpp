#pragma once

#include <cstdint>
#include <string>

#include "semdepth/network.hpp"

// Versioned binary checkpoint: "SDCK" magic, format version, model config,
// then one record per parameter in canonical order (name, shape, 32-bit
// little-endian values, CRC32 of the payload bytes).

namespace semdepth {

void save_checkpoint(const std::string& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::string& path);

// CRC-32 (IEEE 802.3, reflected 0xEDB88320 polynomial).
std::uint32_t crc32(const void* data, std::size_t size);

}  // namespace semdepth
