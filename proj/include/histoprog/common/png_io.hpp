#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace histoprog {

/// 8-bit interleaved image as stored on disk.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> data;
};

/// Reads any PNG and converts it to 8-bit RGB.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

using Rgb8 = std::array<std::uint8_t, 3>;

/// Palette PNG: one byte index per pixel into `palette`.
void write_indexed_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
                       const std::vector<std::uint8_t>& indices, const std::vector<Rgb8>& palette);

/// Reads a palette PNG back as indices (used to check exported maps).
std::vector<std::uint8_t> read_indexed_png(const std::filesystem::path& path, std::size_t& width,
                                           std::size_t& height, std::vector<Rgb8>& palette);

}  // namespace histoprog
