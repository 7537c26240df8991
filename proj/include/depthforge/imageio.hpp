#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "depthforge/common.hpp"

namespace df {

// 8-bit binary PGM (P5), maxval 255. Pixels are row-major, top row first.
void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_pgm(const std::string& path, std::size_t& width, std::size_t& height);

// Single-channel (Pf) or RGB (PF) PFM, 32-bit floats. A negative scale marks
// little-endian payload, which is what this writer always emits. Rows are
// stored bottom-up per the format; these helpers present them top-down.
void write_pfm(const std::string& path, std::size_t width, std::size_t height,
               std::size_t channels, const std::vector<float>& data);
std::vector<float> read_pfm(const std::string& path, std::size_t& width, std::size_t& height,
                            std::size_t& channels);

}  // namespace df
