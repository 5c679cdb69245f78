#include "histoprog/stainlab/color.hpp"

#include <algorithm>
#include <cmath>

#include "histoprog/common/error.hpp"
#include "json.hpp"

namespace histoprog::stainlab {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

constexpr Mat3 kRgbToXyz = {{{0.4124564, 0.3575761, 0.1804375},
                             {0.2126729, 0.7151522, 0.0721750},
                             {0.0193339, 0.1191920, 0.9503041}}};

Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r;
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

const Mat3& xyz_to_rgb() {
  static const Mat3 inv = invert(kRgbToXyz);
  return inv;
}

// Reference white is the image of RGB (1,1,1) so white maps to a = b = 0 exactly.
const std::array<double, 3>& white() {
  static const std::array<double, 3> w = {
      kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
      kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
      kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2],
  };
  return w;
}

constexpr double kDelta = 6.0 / 29.0;

double to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }
double from_linear(double c) { return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055; }
double f(double t) { return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3 * kDelta * kDelta) + 4.0 / 29.0; }
double f_inv(double t) { return t > kDelta ? t * t * t : 3 * kDelta * kDelta * (t - 4.0 / 29.0); }

}  // namespace

std::array<double, 3> rgb_to_lab(const std::array<double, 3>& rgb) {
  std::array<double, 3> lin, xyz{};
  for (int k = 0; k < 3; ++k) lin[k] = to_linear(std::clamp(rgb[k], 0.0, 1.0));
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) xyz[i] += kRgbToXyz[i][k] * lin[k];
  }
  const auto& w = white();
  const double fx = f(xyz[0] / w[0]), fy = f(xyz[1] / w[1]), fz = f(xyz[2] / w[2]);
  return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

std::array<double, 3> lab_to_rgb(const std::array<double, 3>& lab) {
  const double fy = (lab[0] + 16) / 116;
  const double fx = fy + lab[1] / 500;
  const double fz = fy - lab[2] / 200;
  const auto& w = white();
  const std::array<double, 3> xyz = {w[0] * f_inv(fx), w[1] * f_inv(fy), w[2] * f_inv(fz)};
  const Mat3& m = xyz_to_rgb();
  std::array<double, 3> rgb{};
  for (int i = 0; i < 3; ++i) {
    double lin = 0;
    for (int k = 0; k < 3; ++k) lin += m[i][k] * xyz[k];
    rgb[i] = std::clamp(from_linear(std::max(lin, 0.0)), 0.0, 1.0);
  }
  return rgb;
}

RasterImage rgb_to_lab(const RasterImage& rgb) {
  if (rgb.channels != 3) throw ValidationError("rgb_to_lab: expected 3 channels");
  RasterImage lab(rgb.height, rgb.width, 3);
  for (std::size_t i = 0; i < rgb.pixels(); ++i) {
    const auto v = rgb_to_lab(std::array<double, 3>{rgb.data[3 * i], rgb.data[3 * i + 1], rgb.data[3 * i + 2]});
    std::copy(v.begin(), v.end(), &lab.data[3 * i]);
  }
  return lab;
}

RasterImage lab_to_rgb(const RasterImage& lab) {
  if (lab.channels != 3) throw ValidationError("lab_to_rgb: expected 3 channels");
  RasterImage rgb(lab.height, lab.width, 3);
  for (std::size_t i = 0; i < lab.pixels(); ++i) {
    const auto v = lab_to_rgb(std::array<double, 3>{lab.data[3 * i], lab.data[3 * i + 1], lab.data[3 * i + 2]});
    std::copy(v.begin(), v.end(), &rgb.data[3 * i]);
  }
  return rgb;
}

RasterImage rgb_lab_roundtrip(const RasterImage& rgb) { return lab_to_rgb(rgb_to_lab(rgb)); }

LabStats lab_stats_of_lab(const RasterImage& lab) {
  LabStats s;
  const double n = static_cast<double>(lab.pixels());
  for (std::size_t i = 0; i < lab.pixels(); ++i) {
    for (int k = 0; k < 3; ++k) s.mean[k] += lab.data[3 * i + k];
  }
  for (auto& m : s.mean) m /= n;
  for (std::size_t i = 0; i < lab.pixels(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const double d = lab.data[3 * i + k] - s.mean[k];
      s.std[k] += d * d;
    }
  }
  for (auto& v : s.std) v = std::sqrt(v / n);
  return s;
}

LabStats lab_stats(const RasterImage& rgb) { return lab_stats_of_lab(rgb_to_lab(rgb)); }

RasterImage reinhard_lab(const RasterImage& src_lab, const LabStats& target) {
  for (double s : target.std) {
    if (!(s > 0)) throw ValidationError("target standard deviations must be positive");
  }
  const LabStats src = lab_stats_of_lab(src_lab);
  for (double s : src.std) {
    if (!(s > 1e-12)) throw ValidationError("degenerate channel");
  }
  RasterImage out = src_lab;
  for (std::size_t i = 0; i < out.pixels(); ++i) {
    for (int k = 0; k < 3; ++k) {
      double& v = out.data[3 * i + k];
      v = (v - src.mean[k]) / src.std[k] * target.std[k] + target.mean[k];
    }
  }
  return out;
}

RasterImage reinhard_normalize(const RasterImage& src, const LabStats& target) {
  validate_raster(src, "source image");
  return lab_to_rgb(reinhard_lab(rgb_to_lab(src), target));
}

std::string lab_stats_json(const LabStats& s) {
  return nlohmann::json{{"mean", s.mean}, {"std", s.std}}.dump(1);
}

LabStats lab_stats_from_json(const std::string& text) {
  LabStats s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.mean = j.at("mean").get<std::array<double, 3>>();
    s.std = j.at("std").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad Lab stats: ") + e.what());
  }
  for (double v : s.std) {
    if (!(v > 0)) throw ValidationError("Lab stats standard deviations must be positive");
  }
  return s;
}

}  // namespace histoprog::stainlab
