#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tcr/image.hpp"

namespace tcr::slide {

struct TileRef {
  std::int64_t x = 0;  ///< tile origin in level pixels
  std::int64_t y = 0;
  int width = 0;
  int height = 0;
  std::string file;  ///< relative to the pyramid directory
  std::uint32_t crc32 = 0;
};

struct LevelInfo {
  int index = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<TileRef> tiles;  ///< row-major over the tile grid
};

struct Manifest {
  int format_version = 1;
  std::int64_t width = 0;
  std::int64_t height = 0;
  double mpp = 0.0;
  int tile_size = 256;
  std::vector<LevelInfo> levels;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

/// Missing tile, checksum mismatch or malformed manifest.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RegionRead {
  RgbImage image;
  Rect rect;             ///< level-0 rect actually read (after clipping)
  bool clipped = false;  ///< the requested rect extended past the slide
};

/// Number of levels (including level 0) for successive 2x halving until the
/// larger dimension fits in one tile.
int level_count(std::int64_t width, std::int64_t height, int tile_size);

/// Output extent of a read at `factor`.
std::int64_t scaled_extent(std::int64_t extent, double factor);

/// Immutable on-disk pyramid: directory with manifest.json and P6 tiles.
/// Concurrent reads are safe.
class SlidePyramid {
 public:
  static SlidePyramid open(const std::filesystem::path& dir);

  [[nodiscard]] const Manifest& manifest() const { return manifest_; }
  [[nodiscard]] const std::filesystem::path& directory() const { return dir_; }
  [[nodiscard]] std::int64_t width() const { return manifest_.width; }
  [[nodiscard]] std::int64_t height() const { return manifest_.height; }
  [[nodiscard]] double mpp() const { return manifest_.mpp; }
  [[nodiscard]] int levels() const { return static_cast<int>(manifest_.levels.size()); }

  /// One stored tile, checksum-verified.
  [[nodiscard]] RgbImage read_tile(int level, std::size_t index) const;
  /// Pixels of `level` inside `rect` (level coordinates, must be in bounds).
  [[nodiscard]] RgbImage read_level(int level, const Rect& rect) const;
  /// Level-0 rect resampled by `factor` in (0, 1]. Output pixel i has its
  /// center at level-0 x + (i + 0.5) / factor, sampled bilinearly from the
  /// finest level whose downsample is <= 1 / factor. Output extent is
  /// max(1, round(w * factor)).
  [[nodiscard]] RegionRead read_region(const Rect& level0, double factor) const;
  /// Pixels [x, x+w) x [y, y+h) of the whole-slide raster at `factor`, whose
  /// pixel g has its level-0 center at (g + 0.5) / factor. Reads of the same
  /// raster pixel agree regardless of the window.
  [[nodiscard]] RgbImage read_raster(const Rect& raster, double factor) const;
  /// Raster extent of the whole slide at `factor`.
  [[nodiscard]] Rect raster_extent(double factor) const {
    return {0, 0, scaled_extent(manifest_.width, factor), scaled_extent(manifest_.height, factor)};
  }
  /// Checks every tile against the manifest.
  void verify() const;

 private:
  [[nodiscard]] int level_for(double factor) const;
  [[nodiscard]] RgbImage resample(double factor, const Rect& origin_l0, const Rect& raster) const;

  std::filesystem::path dir_;
  Manifest manifest_;
};

/// Writes a pyramid for `level0` into `dir` with 2x box-filter levels. Tiles
/// first, manifest last.
SlidePyramid build_pyramid(const RgbImage& level0, double mpp, const std::filesystem::path& dir,
                           int tile_size = 256);

/// Half-size box filter; odd trailing rows/columns average what exists.
RgbImage downsample2(const RgbImage& image);

}  // namespace tcr::slide
