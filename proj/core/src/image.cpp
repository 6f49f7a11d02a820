#include "tcr/image.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace tcr {

Rect Rect::intersect(const Rect& o) const {
  const std::int64_t x0 = std::max(x, o.x);
  const std::int64_t y0 = std::max(y, o.y);
  const std::int64_t x1 = std::min(right(), o.right());
  const std::int64_t y1 = std::min(bottom(), o.bottom());
  if (x1 <= x0 || y1 <= y0) return Rect{x0, y0, 0, 0};
  return Rect{x0, y0, x1 - x0, y1 - y0};
}

std::string Rect::str() const {
  std::ostringstream os;
  os << x << ',' << y << ',' << w << ',' << h;
  return os.str();
}

RgbImage crop(const RgbImage& image, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w < 0 || h < 0 || x + w > image.width || y + h > image.height) {
    throw std::out_of_range("crop window outside image");
  }
  RgbImage out(w, h);
  for (int r = 0; r < h; ++r) {
    std::memcpy(out.px(0, r), image.px(x, y + r), static_cast<std::size_t>(w) * 3);
  }
  return out;
}

DensityMap crop(const DensityMap& map, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w < 0 || h < 0 || x + w > map.width || y + h > map.height) {
    throw std::out_of_range("crop window outside map");
  }
  DensityMap out(w, h);
  for (int r = 0; r < h; ++r) {
    std::copy_n(&map.values[static_cast<std::size_t>(y + r) * map.width + x], w,
                &out.values[static_cast<std::size_t>(r) * w]);
  }
  return out;
}

}  // namespace tcr
