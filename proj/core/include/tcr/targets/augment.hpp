#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "tcr/image.hpp"

namespace tcr::targets {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;  // row-major

/// Optical-density stain directions (hematoxylin, eosin, residual = h x e),
/// each unit length. Columns of matrix() map stain amounts to OD.
class StainBasis {
 public:
  StainBasis(const Vec3& hematoxylin, const Vec3& eosin);
  /// Published H&E vectors: H (0.650, 0.704, 0.286), E (0.072, 0.990, 0.105).
  static StainBasis he();

  [[nodiscard]] const Mat3& matrix() const { return m_; }
  [[nodiscard]] const Mat3& inverse() const { return inv_; }
  [[nodiscard]] Vec3 column(int i) const { return {m_[0][i], m_[1][i], m_[2][i]}; }

 private:
  Mat3 m_{};
  Mat3 inv_{};
};

inline constexpr double kWhite = 255.0;

/// Scales hematoxylin and eosin amounts in OD space and converts back.
RgbImage stain_shift(const RgbImage& image, double h_factor, double e_factor,
                     const StainBasis& basis);

/// Shifts hue (in turns, wrapping), saturation and lightness (clamped).
RgbImage hsl_shift(const RgbImage& image, double d_hue, double d_sat, double d_lum);

/// Sampled Gaussian of radius ceil(3 sigma), normalized to sum 1.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with replicated borders; sigma <= 0 is identity.
DensityMap gaussian_blur(const DensityMap& map, double sigma);
RgbImage gaussian_blur(const RgbImage& image, double sigma);

/// image + amount * (image - blur(image, sigma)).
RgbImage unsharp_mask(const RgbImage& image, double amount, double sigma = 1.0);

/// Dihedral transform k in [0, 8): horizontal mirror when k >= 4, then k % 4
/// clockwise quarter turns.
RgbImage dihedral(const RgbImage& image, int k);
DensityMap dihedral(const DensityMap& map, int k);
int dihedral_inverse(int k);
/// Where pixel (x, y) of a w x h raster lands under transform k.
std::pair<std::int64_t, std::int64_t> dihedral_point(std::int64_t x, std::int64_t y,
                                                     std::int64_t w, std::int64_t h, int k);

struct AugmentRanges {
  double stain_lo = 0.85, stain_hi = 1.15;
  double hue = 0.02;  ///< +-, in turns
  double sat = 0.1;
  double lum = 0.1;
  double blur_sigma_max = 0.8;
  double sharpen_max = 0.5;
};

/// One sample's augmentation draw; identity by default.
struct AugmentParams {
  double h_factor = 1.0;
  double e_factor = 1.0;
  double d_hue = 0.0;
  double d_sat = 0.0;
  double d_lum = 0.0;
  double blur_sigma = 0.0;  ///< at most one of blur_sigma / sharpen is non-zero
  double sharpen = 0.0;
  int dihedral = 0;
};

AugmentParams sample_augment(std::uint64_t seed, const AugmentRanges& ranges = {});

/// Stain shift, HSL shift, then blur or sharpen. Geometry is applied
/// separately so targets can follow.
RgbImage apply_color(const RgbImage& image, const AugmentParams& params, const StainBasis& basis);

}  // namespace tcr::targets
