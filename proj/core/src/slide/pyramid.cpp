#include "tcr/slide/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "tcr/io.hpp"

namespace tcr::slide {

namespace fs = std::filesystem;

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : m.levels) {
    nlohmann::json tiles = nlohmann::json::array();
    for (const auto& t : l.tiles) {
      tiles.push_back({{"x", t.x}, {"y", t.y}, {"width", t.width}, {"height", t.height},
                       {"file", t.file}, {"crc32", t.crc32}});
    }
    levels.push_back({{"index", l.index}, {"width", l.width}, {"height", l.height}, {"tiles", tiles}});
  }
  return {{"format_version", m.format_version}, {"width", m.width}, {"height", m.height},
          {"mpp", m.mpp}, {"tile_size", m.tile_size}, {"levels", levels}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) {
      throw IntegrityError("unsupported pyramid format_version " + std::to_string(m.format_version));
    }
    m.width = j.at("width").get<std::int64_t>();
    m.height = j.at("height").get<std::int64_t>();
    m.mpp = j.at("mpp").get<double>();
    m.tile_size = j.at("tile_size").get<int>();
    for (const auto& l : j.at("levels")) {
      LevelInfo info;
      info.index = l.at("index").get<int>();
      info.width = l.at("width").get<std::int64_t>();
      info.height = l.at("height").get<std::int64_t>();
      for (const auto& t : l.at("tiles")) {
        info.tiles.push_back({t.at("x").get<std::int64_t>(), t.at("y").get<std::int64_t>(),
                              t.at("width").get<int>(), t.at("height").get<int>(),
                              t.at("file").get<std::string>(), t.at("crc32").get<std::uint32_t>()});
      }
      m.levels.push_back(std::move(info));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed manifest: ") + e.what());
  }
}

int level_count(std::int64_t width, std::int64_t height, int tile_size) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("pyramid needs a non-empty image");
  if (tile_size <= 0) throw std::invalid_argument("tile size must be positive");
  int levels = 1;
  for (std::int64_t m = std::max(width, height); m >= tile_size; m = (m + 1) / 2) ++levels;
  return levels;
}

std::int64_t scaled_extent(std::int64_t extent, double factor) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(extent) * factor));
}

RgbImage downsample2(const RgbImage& image) {
  const int w = (image.width + 1) / 2, h = (image.height + 1) / 2;
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const int y0 = 2 * y, y1 = std::min(2 * y + 1, image.height - 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = 2 * x, x1 = std::min(2 * x + 1, image.width - 1);
      const int n = (y1 - y0 + 1) * (x1 - x0 + 1);
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int yy = y0; yy <= y1; ++yy)
          for (int xx = x0; xx <= x1; ++xx) sum += image.px(xx, yy)[c];
        out.px(x, y)[c] = static_cast<std::uint8_t>((sum + n / 2) / n);
      }
    }
  }
  return out;
}

namespace {

void validate(const Manifest& m, const fs::path& dir) {
  if (m.width <= 0 || m.height <= 0 || m.tile_size <= 0 || !(m.mpp > 0.0)) {
    throw IntegrityError("manifest has invalid dimensions, tile size or mpp");
  }
  if (m.levels.empty()) throw IntegrityError("manifest lists no levels");
  std::int64_t w = m.width, h = m.height;
  for (std::size_t k = 0; k < m.levels.size(); ++k) {
    const auto& l = m.levels[k];
    if (l.index != static_cast<int>(k) || l.width != w || l.height != h) {
      throw IntegrityError("level " + std::to_string(k) + " has inconsistent dimensions");
    }
    const std::int64_t tx = (w + m.tile_size - 1) / m.tile_size, ty = (h + m.tile_size - 1) / m.tile_size;
    if (static_cast<std::int64_t>(l.tiles.size()) != tx * ty) {
      throw IntegrityError("level " + std::to_string(k) + " has the wrong tile count");
    }
    for (std::size_t i = 0; i < l.tiles.size(); ++i) {
      const auto& t = l.tiles[i];
      const std::int64_t ex = static_cast<std::int64_t>(i % tx) * m.tile_size;
      const std::int64_t ey = static_cast<std::int64_t>(i / tx) * m.tile_size;
      if (t.x != ex || t.y != ey || t.width != std::min<std::int64_t>(m.tile_size, w - ex) ||
          t.height != std::min<std::int64_t>(m.tile_size, h - ey)) {
        throw IntegrityError("tile " + t.file + " has an unexpected placement");
      }
      if (!fs::exists(dir / t.file)) throw IntegrityError("missing tile " + t.file);
    }
    w = (w + 1) / 2;
    h = (h + 1) / 2;
  }
}

}  // namespace

SlidePyramid SlidePyramid::open(const fs::path& dir) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(dir / "manifest.json");
  } catch (const IoError& e) {
    throw IntegrityError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed manifest: ") + e.what());
  }
  SlidePyramid p;
  p.dir_ = dir;
  p.manifest_ = manifest_from_json(j);
  validate(p.manifest_, dir);
  return p;
}

RgbImage SlidePyramid::read_tile(int level, std::size_t index) const {
  const auto& t = manifest_.levels.at(static_cast<std::size_t>(level)).tiles.at(index);
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(dir_ / t.file);
  } catch (const IoError& e) {
    throw IntegrityError(e.what());
  }
  if (crc32(bytes.data(), bytes.size()) != t.crc32) throw IntegrityError("checksum mismatch in " + t.file);
  RgbImage img;
  try {
    img = decode_ppm(bytes);
  } catch (const IoError& e) {
    throw IntegrityError(t.file + ": " + e.what());
  }
  if (img.width != t.width || img.height != t.height) throw IntegrityError("tile " + t.file + " has wrong extent");
  return img;
}

RgbImage SlidePyramid::read_level(int level, const Rect& rect) const {
  const auto& l = manifest_.levels.at(static_cast<std::size_t>(level));
  if (rect.empty() || !Rect{0, 0, l.width, l.height}.contains(rect)) {
    throw std::out_of_range("level read " + rect.str() + " outside level " + std::to_string(level));
  }
  const std::int64_t ts = manifest_.tile_size;
  const std::int64_t tiles_x = (l.width + ts - 1) / ts;
  RgbImage out(static_cast<int>(rect.w), static_cast<int>(rect.h));
  for (std::int64_t ty = rect.y / ts; ty <= (rect.bottom() - 1) / ts; ++ty) {
    for (std::int64_t tx = rect.x / ts; tx <= (rect.right() - 1) / ts; ++tx) {
      const auto tile = read_tile(level, static_cast<std::size_t>(ty * tiles_x + tx));
      const Rect tr{tx * ts, ty * ts, tile.width, tile.height};
      const Rect part = tr.intersect(rect);
      for (std::int64_t y = part.y; y < part.bottom(); ++y) {
        std::copy_n(tile.px(static_cast<int>(part.x - tr.x), static_cast<int>(y - tr.y)), part.w * 3,
                    out.px(static_cast<int>(part.x - rect.x), static_cast<int>(y - rect.y)));
      }
    }
  }
  return out;
}

int SlidePyramid::level_for(double factor) const {
  if (!(factor > 0.0) || factor > 1.0) throw std::invalid_argument("resize factor must be in (0, 1]");
  int k = 0;
  while (k + 1 < levels() && std::ldexp(factor, k + 1) <= 1.0 + 1e-12) ++k;
  return k;
}

RgbImage SlidePyramid::resample(double factor, const Rect& origin_l0, const Rect& raster) const {
  const int k = level_for(factor);
  const double ds = std::ldexp(1.0, k);
  const auto& l = manifest_.levels[static_cast<std::size_t>(k)];
  struct Tap {
    std::int64_t i0, i1;
    double w1;
  };
  // Output pixel i has its level-0 center at base + (first + i + 0.5) / factor.
  auto taps = [&](std::int64_t base, std::int64_t first, std::int64_t n, std::int64_t limit) {
    std::vector<Tap> t(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const double u = (static_cast<double>(base) + (static_cast<double>(first + i) + 0.5) / factor) / ds - 0.5;
      const double f = std::floor(u);
      const auto i0 = static_cast<std::int64_t>(f);
      t[static_cast<std::size_t>(i)] = {std::clamp<std::int64_t>(i0, 0, limit - 1),
                                        std::clamp<std::int64_t>(i0 + 1, 0, limit - 1), u - f};
    }
    return t;
  };
  const std::int64_t ow = raster.w, oh = raster.h;
  const auto tx = taps(origin_l0.x, raster.x, ow, l.width);
  const auto ty = taps(origin_l0.y, raster.y, oh, l.height);
  const std::int64_t sx0 = tx.front().i0, sx1 = tx.back().i1, sy0 = ty.front().i0, sy1 = ty.back().i1;
  const auto src = read_level(k, Rect{sx0, sy0, sx1 - sx0 + 1, sy1 - sy0 + 1});

  RgbImage out(static_cast<int>(ow), static_cast<int>(oh));
  for (std::int64_t y = 0; y < oh; ++y) {
    const auto& vy = ty[static_cast<std::size_t>(y)];
    const auto* row0 = src.px(0, static_cast<int>(vy.i0 - sy0));
    const auto* row1 = src.px(0, static_cast<int>(vy.i1 - sy0));
    auto* dst = out.px(0, static_cast<int>(y));
    for (std::int64_t x = 0; x < ow; ++x) {
      const auto& vx = tx[static_cast<std::size_t>(x)];
      const std::size_t a = static_cast<std::size_t>(vx.i0 - sx0) * 3, b = static_cast<std::size_t>(vx.i1 - sx0) * 3;
      for (int c = 0; c < 3; ++c) {
        const double top = row0[a + c] * (1.0 - vx.w1) + row0[b + c] * vx.w1;
        const double bot = row1[a + c] * (1.0 - vx.w1) + row1[b + c] * vx.w1;
        const double v = top * (1.0 - vy.w1) + bot * vy.w1;
        dst[x * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

RegionRead SlidePyramid::read_region(const Rect& level0, double factor) const {
  (void)level_for(factor);
  RegionRead r;
  r.rect = level0.intersect(Rect{0, 0, manifest_.width, manifest_.height});
  r.clipped = r.rect != level0;
  if (r.rect.empty()) throw std::out_of_range("region " + level0.str() + " lies outside the slide");
  r.image = resample(factor, r.rect, Rect{0, 0, scaled_extent(r.rect.w, factor), scaled_extent(r.rect.h, factor)});
  return r;
}

RgbImage SlidePyramid::read_raster(const Rect& raster, double factor) const {
  (void)level_for(factor);
  if (raster.empty() || !raster_extent(factor).contains(raster)) {
    throw std::out_of_range("raster " + raster.str() + " outside the slide at factor " + std::to_string(factor));
  }
  return resample(factor, Rect{}, raster);
}

void SlidePyramid::verify() const {
  for (int k = 0; k < levels(); ++k) {
    for (std::size_t i = 0; i < manifest_.levels[static_cast<std::size_t>(k)].tiles.size(); ++i) {
      (void)read_tile(k, i);
    }
  }
}

SlidePyramid build_pyramid(const RgbImage& level0, double mpp, const fs::path& dir, int tile_size) {
  if (level0.width <= 0 || level0.height <= 0) throw std::invalid_argument("pyramid needs a non-empty image");
  if (!(mpp > 0.0)) throw std::invalid_argument("pyramid needs a positive mpp");
  const int n = level_count(level0.width, level0.height, tile_size);
  fs::create_directories(dir);
  fs::remove(dir / "manifest.json");

  Manifest m;
  m.width = level0.width;
  m.height = level0.height;
  m.mpp = mpp;
  m.tile_size = tile_size;
  RgbImage img = level0;
  for (int k = 0; k < n; ++k) {
    if (k > 0) img = downsample2(img);
    LevelInfo info{k, img.width, img.height, {}};
    const std::string sub = "level_" + std::to_string(k);
    fs::create_directories(dir / sub);
    for (int y = 0; y < img.height; y += tile_size) {
      for (int x = 0; x < img.width; x += tile_size) {
        const auto tile = crop(img, x, y, std::min(tile_size, img.width - x), std::min(tile_size, img.height - y));
        const auto bytes = encode_ppm(tile);
        const std::string file = sub + "/" + std::to_string(x / tile_size) + "_" + std::to_string(y / tile_size) + ".ppm";
        write_file_atomic(dir / file, bytes);
        info.tiles.push_back({x, y, tile.width, tile.height, file, crc32(bytes.data(), bytes.size())});
      }
    }
    m.levels.push_back(std::move(info));
  }
  write_file_atomic(dir / "manifest.json", to_json(m).dump(1));
  return SlidePyramid::open(dir);
}

}  // namespace tcr::slide
