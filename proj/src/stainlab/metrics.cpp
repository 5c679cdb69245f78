#include "histoprog/stainlab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "histoprog/common/error.hpp"

namespace histoprog::stainlab {

using gradcore::Tensor;
using gradcore::Var;

namespace {

void check_grid(std::size_t h, std::size_t w, const SsimParams& p) {
  if (h < p.window || w < p.window) {
    throw ValidationError("SSIM needs images of at least " + std::to_string(p.window) + "x" +
                          std::to_string(p.window));
  }
  if (p.stride == 0) throw ValidationError("SSIM stride must be positive");
}

struct WindowTerms {
  double mx, my, vx, vy, cxy;
  double a1, a2, b1, b2;
  double value() const { return a1 * a2 / (b1 * b2); }
};

WindowTerms window_terms(const double* x, const double* y, std::size_t width, std::size_t r0, std::size_t c0,
                         const SsimParams& p) {
  const double n = static_cast<double>(p.window * p.window);
  double sx = 0, sy = 0;
  for (std::size_t r = r0; r < r0 + p.window; ++r) {
    for (std::size_t c = c0; c < c0 + p.window; ++c) {
      sx += x[r * width + c];
      sy += y[r * width + c];
    }
  }
  WindowTerms t{};
  t.mx = sx / n;
  t.my = sy / n;
  for (std::size_t r = r0; r < r0 + p.window; ++r) {
    for (std::size_t c = c0; c < c0 + p.window; ++c) {
      const double dx = x[r * width + c] - t.mx, dy = y[r * width + c] - t.my;
      t.vx += dx * dx;
      t.vy += dy * dy;
      t.cxy += dx * dy;
    }
  }
  t.vx /= n;
  t.vy /= n;
  t.cxy /= n;
  t.a1 = 2 * t.mx * t.my + p.c1;
  t.a2 = 2 * t.cxy + p.c2;
  t.b1 = t.mx * t.mx + t.my * t.my + p.c1;
  t.b2 = t.vx + t.vy + p.c2;
  return t;
}

// Gradient of one window's SSIM with respect to the `y` pixels, scaled by
// `g` and added into gy. Swap the arguments for the x gradient.
void window_grad(const double* x, const double* y, double* gy, std::size_t width, std::size_t r0, std::size_t c0,
                 const WindowTerms& t, bool wrt_x, double g, const SsimParams& p) {
  const double n = static_cast<double>(p.window * p.window);
  const double mo = wrt_x ? t.my : t.mx;  // mean of the other image
  const double ms = wrt_x ? t.mx : t.my;  // mean of the differentiated image
  const double d_mean = t.a2 / t.b2 * (2 * mo * t.b1 - 2 * ms * t.a1) / (t.b1 * t.b1);
  const double d_cov = 2 * t.a1 / (t.b1 * t.b2);
  const double d_var = -t.a1 * t.a2 / (t.b1 * t.b2 * t.b2);
  for (std::size_t r = r0; r < r0 + p.window; ++r) {
    for (std::size_t c = c0; c < c0 + p.window; ++c) {
      const std::size_t k = r * width + c;
      const double other = wrt_x ? y[k] : x[k];
      const double self = wrt_x ? x[k] : y[k];
      gy[k] += g * (d_mean + d_cov * (other - mo) + d_var * 2 * (self - ms)) / n;
    }
  }
}

double ssim_flat(const double* x, const double* y, std::size_t h, std::size_t w, const SsimParams& p) {
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + p.window <= h; r += p.stride) {
    for (std::size_t c = 0; c + p.window <= w; c += p.stride) {
      total += window_terms(x, y, w, r, c, p).value();
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

double ssim(const RasterImage& x, const RasterImage& y, const SsimParams& p) {
  if (x.channels != 1 || y.channels != 1) throw ValidationError("ssim expects grayscale images");
  if (x.height != y.height || x.width != y.width) throw ValidationError("ssim: image shapes differ");
  check_grid(x.height, x.width, p);
  return ssim_flat(x.data.data(), y.data.data(), x.height, x.width, p);
}

double pcc(const RasterImage& x, const RasterImage& y) {
  if (x.data.size() != y.data.size() || x.height != y.height || x.width != y.width) {
    throw ValidationError("pcc: image shapes differ");
  }
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (x.data.empty() || constant(x.data) || constant(y.data)) throw ValidationError("constant image");
  const double n = static_cast<double>(x.data.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) mx += x.data[i], my += y.data[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double dx = x.data[i] - mx, dy = y.data[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) throw ValidationError("constant image");
  return sxy / std::sqrt(sxx * syy);
}

double recon_loss(const RasterImage& orig, const RasterImage& gen) {
  if (orig.height != gen.height || orig.width != gen.width) throw ValidationError("recon_loss: image shapes differ");
  return 1.0 - ssim(to_gray(orig), to_gray(gen));
}

Var ssim_batch(const Var& x, const Var& y, std::size_t height, std::size_t width, const SsimParams& p) {
  check_grid(height, width, p);
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (xv.shape() != yv.shape() || xv.cols() != height * width) {
    throw ValidationError("ssim_batch: expected matching {batch, height*width} inputs");
  }
  const std::size_t batch = xv.rows(), hw = height * width;
  Tensor out({batch});
  for (std::size_t b = 0; b < batch; ++b) {
    out[b] = ssim_flat(&xv[b * hw], &yv[b * hw], height, width, p);
  }
  return gradcore::make_op(
      std::move(out), {x, y},
      [height, width, p, batch, hw](gradcore::Node& self) {
        const Tensor& xv = self.parents[0].value();
        const Tensor& yv = self.parents[1].value();
        std::size_t windows = 0;
        for (std::size_t r = 0; r + p.window <= height; r += p.stride) {
          for (std::size_t c = 0; c + p.window <= width; c += p.stride) ++windows;
        }
        for (int which = 0; which < 2; ++which) {
          gradcore::Node& parent = *self.parents[which].node();
          if (!parent.requires_grad) continue;
          Tensor& g = parent.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b) {
            const double scale = self.grad[b] / static_cast<double>(windows);
            const double* xp = &xv[b * hw];
            const double* yp = &yv[b * hw];
            for (std::size_t r = 0; r + p.window <= height; r += p.stride) {
              for (std::size_t c = 0; c + p.window <= width; c += p.stride) {
                const WindowTerms t = window_terms(xp, yp, width, r, c, p);
                window_grad(xp, yp, &g[b * hw], width, r, c, t, which == 0, scale, p);
              }
            }
          }
        }
      },
      "ssim");
}

Var recon_loss(const Var& orig_gray, const Var& gen_gray, std::size_t height, std::size_t width) {
  return gradcore::add_scalar(gradcore::neg(gradcore::mean(ssim_batch(orig_gray, gen_gray, height, width))), 1.0);
}

}  // namespace histoprog::stainlab
