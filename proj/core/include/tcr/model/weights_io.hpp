#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcr/io.hpp"
#include "tcr/model/unet.hpp"

namespace tcr::model {

inline constexpr std::uint32_t kWeightsFormatVersion = 1;

class WeightsError : public std::runtime_error {
 public:
  enum class Kind { io, format, version, checksum, config_mismatch };

  WeightsError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Layout (little-endian): "FCNW", u32 version, u32 x6 config (levels,
// base_channels, in_channels, out_maps, convs_per_level, deep_extra_convs),
// u32 record count, records {u32 id length, id bytes, u32 ndims, u32 dims[],
// f32 data[]}, then CRC32 of every preceding byte.
std::vector<std::uint8_t> serialize_weights(const UNet& model);
UNet deserialize_weights(const std::vector<std::uint8_t>& bytes,
                         std::optional<int> expected_out_maps = std::nullopt);

void save_weights(const UNet& model, const std::filesystem::path& path);
/// `expected_out_maps` guards against loading a segmentation model where a
/// detection/classification model is required (and vice versa).
UNet load_weights(const std::filesystem::path& path,
                  std::optional<int> expected_out_maps = std::nullopt);

using tcr::crc32;

}  // namespace tcr::model
