#include "histoprog/common/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "histoprog/common/error.hpp"

namespace histoprog {

void validate_raster(const RasterImage& img, const char* what) {
  if (img.channels != 1 && img.channels != 3) {
    throw ValidationError(std::string(what) + ": channels must be 1 or 3");
  }
  if (img.data.size() != img.height * img.width * img.channels) {
    throw ValidationError(std::string(what) + ": data size does not match dimensions");
  }
  if (img.height < 8 || img.width < 8) {
    throw ValidationError(std::string(what) + ": height and width must be at least 8");
  }
  for (double v : img.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + ": values must lie in [0,1]");
  }
}

RasterImage to_gray(const RasterImage& rgb) {
  if (rgb.channels == 1) return rgb;
  RasterImage g(rgb.height, rgb.width, 1);
  for (std::size_t i = 0; i < rgb.pixels(); ++i) {
    const double* p = &rgb.data[3 * i];
    g.data[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return g;
}

RasterImage from_image8(const Image8& img) {
  RasterImage out(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0;
  return out;
}

Image8 to_image8(const RasterImage& img) {
  Image8 out{img.width, img.height, img.channels, std::vector<std::uint8_t>(img.data.size())};
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

RasterImage load_raster(const std::filesystem::path& path) { return from_image8(read_png(path)); }

void save_raster(const std::filesystem::path& path, const RasterImage& img) { write_png(path, to_image8(img)); }

RasterImage crop(const RasterImage& img, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) {
  if (r0 + h > img.height || c0 + w > img.width) throw ValidationError("crop window outside image");
  RasterImage out(h, w, img.channels);
  for (std::size_t r = 0; r < h; ++r) {
    const double* src = &img.data[((r0 + r) * img.width + c0) * img.channels];
    std::copy(src, src + w * img.channels, &out.data[r * w * img.channels]);
  }
  return out;
}

}  // namespace histoprog
