#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcr {

/// Axis-aligned rectangle in integer pixel coordinates (level-0 unless
/// stated otherwise). Half-open: [x, x+w) x [y, y+h).
struct Rect {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t w = 0;
  std::int64_t h = 0;

  [[nodiscard]] std::int64_t right() const { return x + w; }
  [[nodiscard]] std::int64_t bottom() const { return y + h; }
  [[nodiscard]] bool empty() const { return w <= 0 || h <= 0; }
  [[nodiscard]] bool contains(std::int64_t px, std::int64_t py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  [[nodiscard]] bool contains(const Rect& o) const {
    return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
  }
  [[nodiscard]] Rect intersect(const Rect& o) const;
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w < 0 || h < 0) throw std::invalid_argument("negative image extent");
  }

  [[nodiscard]] std::uint8_t* px(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  [[nodiscard]] const std::uint8_t* px(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Single-channel float map. Model outputs and training targets live in
/// [0,1]: detection (map_d), classification (map_c), segmentation (map_s).
struct DensityMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  DensityMap() = default;
  DensityMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {
    if (w < 0 || h < 0) throw std::invalid_argument("negative map extent");
  }

  [[nodiscard]] float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] float at(int x, int y) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }

  friend bool operator==(const DensityMap&, const DensityMap&) = default;
};

RgbImage crop(const RgbImage& image, int x, int y, int w, int h);
DensityMap crop(const DensityMap& map, int x, int y, int w, int h);

}  // namespace tcr
