#pragma once

#include <array>
#include <string>

#include "histoprog/common/raster.hpp"

namespace histoprog::stainlab {

using Vec3 = std::array<double, 3>;

struct StainBasis {
  Vec3 h{};  // hematoxylin OD direction, unit norm
  Vec3 e{};  // eosin OD direction, unit norm
  std::array<double, 2> max_conc{1.0, 1.0};  // robust per-stain concentration scale
};

struct MacenkoParams {
  double od_threshold = 0.15;
  double angle_percentile = 1.0;  // percent, mirrored at the top
  double conc_percentile = 99.0;
  std::size_t min_tissue_pixels = 100;
};

/// Per-pixel optical density -ln(max(v, 1e-6)).
Vec3 optical_density(const Vec3& rgb);

/// Estimates the stain basis of `img` from its tissue pixels.
StainBasis estimate_stain_basis(const RasterImage& img, const MacenkoParams& p = {});

struct MacenkoResult {
  RasterImage image;
  StainBasis source;
};

/// Re-renders `src` in the reference basis and concentration scale.
MacenkoResult macenko_normalize(const RasterImage& src, const StainBasis& ref, const MacenkoParams& p = {});

/// Angle between two directions in degrees.
double angle_degrees(const Vec3& a, const Vec3& b);

std::string stain_basis_json(const StainBasis& b);
StainBasis stain_basis_from_json(const std::string& text);

}  // namespace histoprog::stainlab
