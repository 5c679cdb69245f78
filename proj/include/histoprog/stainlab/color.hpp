#pragma once

#include <array>
#include <string>

#include "histoprog/common/raster.hpp"

namespace histoprog::stainlab {

// sRGB (D65) <-> CIELAB. Lab images reuse RasterImage with unbounded values.
std::array<double, 3> rgb_to_lab(const std::array<double, 3>& rgb);
std::array<double, 3> lab_to_rgb(const std::array<double, 3>& lab);
RasterImage rgb_to_lab(const RasterImage& rgb);
/// Converted back and clamped to [0,1].
RasterImage lab_to_rgb(const RasterImage& lab);
RasterImage rgb_lab_roundtrip(const RasterImage& rgb);

struct LabStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

/// Population mean/std of each Lab channel.
LabStats lab_stats(const RasterImage& rgb);
LabStats lab_stats_of_lab(const RasterImage& lab);

/// Channel-wise affine map in Lab space, before conversion back to RGB.
RasterImage reinhard_lab(const RasterImage& src_lab, const LabStats& target);
RasterImage reinhard_normalize(const RasterImage& src, const LabStats& target);

std::string lab_stats_json(const LabStats& s);
LabStats lab_stats_from_json(const std::string& text);

}  // namespace histoprog::stainlab
