#pragma once

#include <cstddef>
#include <vector>

#include "histoprog/common/png_io.hpp"

namespace histoprog {

/// Interleaved float image, values in [0,1]. channels is 3 (RGB) or 1 (gray).
struct RasterImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<double> data;

  RasterImage() = default;
  RasterImage(std::size_t h, std::size_t w, std::size_t c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  std::size_t pixels() const { return height * width; }
  double& at(std::size_t r, std::size_t c, std::size_t ch = 0) { return data[(r * width + c) * channels + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const { return data[(r * width + c) * channels + ch]; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Checks shape consistency, value range and the minimum 8x8 extent.
void validate_raster(const RasterImage& img, const char* what = "image");

RasterImage to_gray(const RasterImage& rgb);
RasterImage from_image8(const Image8& img);
Image8 to_image8(const RasterImage& img);
RasterImage load_raster(const std::filesystem::path& path);
void save_raster(const std::filesystem::path& path, const RasterImage& img);

/// Copy of the h x w window at (r0, c0).
RasterImage crop(const RasterImage& img, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w);

}  // namespace histoprog
