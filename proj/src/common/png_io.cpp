#include "histoprog/common/png_io.hpp"

#include <png.h>

#include <cstring>

#include "histoprog/common/error.hpp"

namespace histoprog {

Image8 read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("missing input file: " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ValidationError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = 3;
  out.data.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ValidationError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ValidationError("write_png: channels must be 1 or 3");
  }
  if (image.data.size() != image.width * image.height * image.channels) {
    throw ValidationError("write_png: buffer size does not match dimensions");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.data.data(), 0, nullptr)) {
    throw RuntimeFailure("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_indexed_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
                       const std::vector<std::uint8_t>& indices, const std::vector<Rgb8>& palette) {
  if (indices.size() != width * height) throw ValidationError("indexed PNG: size mismatch");
  if (palette.empty() || palette.size() > 256) throw ValidationError("indexed PNG: bad palette");
  for (auto i : indices) {
    if (i >= palette.size()) throw ValidationError("indexed PNG: index outside palette");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<std::uint8_t> colormap;
  for (const auto& c : palette) colormap.insert(colormap.end(), c.begin(), c.end());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGB_COLORMAP;
  img.colormap_entries = static_cast<png_uint_32>(palette.size());
  if (!png_image_write_to_file(&img, path.c_str(), 0, indices.data(), 0, colormap.data())) {
    throw RuntimeFailure("cannot write PNG " + path.string() + ": " + img.message);
  }
}

std::vector<std::uint8_t> read_indexed_png(const std::filesystem::path& path, std::size_t& width,
                                           std::size_t& height, std::vector<Rgb8>& palette) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ValidationError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB_COLORMAP;
  width = img.width;
  height = img.height;
  std::vector<std::uint8_t> indices(PNG_IMAGE_SIZE(img));
  std::vector<std::uint8_t> colormap(PNG_IMAGE_COLORMAP_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, indices.data(), 0, colormap.data())) {
    png_image_free(&img);
    throw ValidationError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  palette.clear();
  for (std::size_t i = 0; i < img.colormap_entries; ++i) {
    palette.push_back({colormap[3 * i], colormap[3 * i + 1], colormap[3 * i + 2]});
  }
  return indices;
}

}  // namespace histoprog
