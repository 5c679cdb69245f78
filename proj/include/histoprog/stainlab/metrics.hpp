#pragma once

#include "histoprog/common/raster.hpp"
#include "histoprog/gradcore/var.hpp"

namespace histoprog::stainlab {

struct SsimParams {
  std::size_t window = 8;
  std::size_t stride = 4;
  double c1 = 1e-4;  // (0.01)^2
  double c2 = 9e-4;  // (0.03)^2
};

/// Mean windowed SSIM of two grayscale images of equal shape.
double ssim(const RasterImage& x, const RasterImage& y, const SsimParams& p = {});

/// Pearson correlation over all flattened values (signed).
double pcc(const RasterImage& x, const RasterImage& y);

/// 1 - SSIM of the grayscale versions.
double recon_loss(const RasterImage& orig, const RasterImage& gen);

/// Differentiable SSIM for a batch of flattened gray images.
/// x, y: {batch, height*width}; result {batch}.
gradcore::Var ssim_batch(const gradcore::Var& x, const gradcore::Var& y, std::size_t height, std::size_t width,
                         const SsimParams& p = {});

/// Mean over the batch of 1 - SSIM.
gradcore::Var recon_loss(const gradcore::Var& orig_gray, const gradcore::Var& gen_gray, std::size_t height,
                         std::size_t width);

}  // namespace histoprog::stainlab
