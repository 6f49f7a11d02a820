#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcr/image.hpp"

namespace tcr {

/// CRC-32 (IEEE) over a byte range.
std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

/// Binary PPM (P6, maxval 255).
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);
RgbImage decode_ppm(std::span<const std::uint8_t> bytes);

/// 8-bit RGB or RGBA PNG.
std::vector<std::uint8_t> encode_png(int width, int height, int channels,
                                     std::span<const std::uint8_t> pixels);
inline std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  return encode_png(image.width, image.height, 3, image.pixels);
}

}  // namespace tcr
