#include "histoprog/stainlab/macenko.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "histoprog/common/error.hpp"
#include "json.hpp"

namespace histoprog::stainlab {

namespace {

// Linear-interpolated percentile (numpy default) of unsorted values.
double percentile(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Vec3 unit(const Eigen::Vector3d& v) {
  Eigen::Vector3d u = v;
  if (u.sum() < 0) u = -u;
  u = u.cwiseMax(0.0);
  u.normalize();
  return {u[0], u[1], u[2]};
}

// Least-squares concentrations of every pixel; rows are pixels.
Eigen::MatrixX2d concentrations(const RasterImage& img, const StainBasis& b) {
  Eigen::Matrix<double, 3, 2> s;
  s << b.h[0], b.e[0], b.h[1], b.e[1], b.h[2], b.e[2];
  const Eigen::Matrix<double, 2, 3> pinv = (s.transpose() * s).inverse() * s.transpose();
  Eigen::MatrixX2d c(img.pixels(), 2);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const Vec3 od = optical_density({img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]});
    c.row(static_cast<Eigen::Index>(i)) = (pinv * Eigen::Vector3d(od[0], od[1], od[2])).transpose();
  }
  return c;
}

std::array<double, 2> max_concentrations(const Eigen::MatrixX2d& c, double pct) {
  std::array<double, 2> out{};
  for (int k = 0; k < 2; ++k) {
    std::vector<double> col(c.rows());
    for (Eigen::Index i = 0; i < c.rows(); ++i) col[i] = c(i, k);
    out[k] = percentile(std::move(col), pct);
  }
  return out;
}

}  // namespace

Vec3 optical_density(const Vec3& rgb) {
  return {-std::log(std::max(rgb[0], 1e-6)), -std::log(std::max(rgb[1], 1e-6)), -std::log(std::max(rgb[2], 1e-6))};
}

double angle_degrees(const Vec3& a, const Vec3& b) {
  const double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  return std::acos(std::clamp(dot / (na * nb), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

StainBasis estimate_stain_basis(const RasterImage& img, const MacenkoParams& p) {
  validate_raster(img, "source image");
  if (img.channels != 3) throw ValidationError("Macenko needs an RGB image");
  std::vector<Eigen::Vector3d> tissue;
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const Vec3 od = optical_density({img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]});
    if (od[0] >= p.od_threshold && od[1] >= p.od_threshold && od[2] >= p.od_threshold) {
      tissue.emplace_back(od[0], od[1], od[2]);
    }
  }
  if (tissue.size() < p.min_tissue_pixels) throw ValidationError("background-only image");

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& v : tissue) mean += v;
  mean /= static_cast<double>(tissue.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& v : tissue) cov += (v - mean) * (v - mean).transpose();
  cov /= static_cast<double>(tissue.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // Eigenvalues ascend; the plane of the two largest holds the stains.
  Eigen::Vector3d e1 = eig.eigenvectors().col(2), e2 = eig.eigenvectors().col(1);
  if (e1.sum() < 0) e1 = -e1;
  if (e2.sum() < 0) e2 = -e2;

  std::vector<double> phi(tissue.size());
  for (std::size_t i = 0; i < tissue.size(); ++i) phi[i] = std::atan2(tissue[i].dot(e2), tissue[i].dot(e1));
  const double lo = percentile(phi, p.angle_percentile);
  const double hi = percentile(phi, 100.0 - p.angle_percentile);
  const Vec3 v_lo = unit(e1 * std::cos(lo) + e2 * std::sin(lo));
  const Vec3 v_hi = unit(e1 * std::cos(hi) + e2 * std::sin(hi));

  StainBasis b;
  if (v_lo[0] > v_hi[0]) {
    b.h = v_lo, b.e = v_hi;
  } else {
    b.h = v_hi, b.e = v_lo;
  }
  if (angle_degrees(b.h, b.e) <= 1.0) throw ValidationError("stain vectors are not separable");
  b.max_conc = max_concentrations(concentrations(img, b), p.conc_percentile);
  return b;
}

MacenkoResult macenko_normalize(const RasterImage& src, const StainBasis& ref, const MacenkoParams& p) {
  MacenkoResult out{RasterImage(src.height, src.width, 3), estimate_stain_basis(src, p)};
  const Eigen::MatrixX2d c = concentrations(src, out.source);
  std::array<double, 2> scale{};
  for (int k = 0; k < 2; ++k) {
    if (!(out.source.max_conc[k] > 0)) throw ValidationError("degenerate stain concentration");
    scale[k] = ref.max_conc[k] / out.source.max_conc[k];
  }
  for (std::size_t i = 0; i < src.pixels(); ++i) {
    const double ch = c(static_cast<Eigen::Index>(i), 0) * scale[0];
    const double ce = c(static_cast<Eigen::Index>(i), 1) * scale[1];
    for (int k = 0; k < 3; ++k) {
      out.image.data[3 * i + k] = std::clamp(std::exp(-(ref.h[k] * ch + ref.e[k] * ce)), 0.0, 1.0);
    }
  }
  return out;
}

std::string stain_basis_json(const StainBasis& b) {
  return nlohmann::json{{"h", b.h}, {"e", b.e}, {"max_conc", b.max_conc}}.dump(1);
}

StainBasis stain_basis_from_json(const std::string& text) {
  StainBasis b;
  try {
    const auto j = nlohmann::json::parse(text);
    b.h = j.at("h").get<Vec3>();
    b.e = j.at("e").get<Vec3>();
    b.max_conc = j.at("max_conc").get<std::array<double, 2>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad stain basis: ") + e.what());
  }
  return b;
}

}  // namespace histoprog::stainlab
