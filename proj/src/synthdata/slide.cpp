#include <algorithm>
#include <cmath>
#include <numeric>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/rng.hpp"
#include "histoprog/synthdata/synthdata.hpp"

namespace histoprog::synthdata {

namespace {

const char* const kClassNames[kNumClasses] = {"normal", "fibrosis", "cancer", "necrosis", "background"};

Vec3 unit(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

// Bilinear value noise on a random lattice, output in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(std::size_t height, std::size_t width, double scale_r, double scale_c, Rng& rng)
      : sr_(scale_r), sc_(scale_c) {
    rows_ = static_cast<std::size_t>(height / scale_r) + 2;
    cols_ = static_cast<std::size_t>(width / scale_c) + 2;
    lattice_.resize(rows_ * cols_);
    for (auto& v : lattice_) v = uniform(rng, -1.0, 1.0);
  }

  double operator()(double r, double c) const {
    const double fr = r / sr_, fc = c / sc_;
    const auto ir = static_cast<std::size_t>(fr), ic = static_cast<std::size_t>(fc);
    const double tr = smooth(fr - ir), tc = smooth(fc - ic);
    auto at = [&](std::size_t i, std::size_t j) { return lattice_[std::min(i, rows_ - 1) * cols_ + std::min(j, cols_ - 1)]; };
    const double top = at(ir, ic) * (1 - tc) + at(ir, ic + 1) * tc;
    const double bot = at(ir + 1, ic) * (1 - tc) + at(ir + 1, ic + 1) * tc;
    return top * (1 - tr) + bot * tr;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double sr_, sc_;
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> lattice_;
};

struct ClassLook {
  double h, e;          // base concentrations
  double amp_h, amp_e;  // additive texture amplitudes
  double scale_r, scale_c;
  double nuclei;        // nucleus-field threshold; higher means fewer nuclei
};

// Texture model per class, indexed by TissueClass.
constexpr ClassLook kLooks[kNumClasses] = {
    {0.55, 0.70, 0.35, 0.30, 5.0, 5.0, 0.45},    // normal: mixed, medium grain
    {0.05, 0.95, 0.15, 0.30, 3.0, 20.0, 0.60},   // fibrosis: eosin streaks
    {1.20, 0.20, 0.60, 0.35, 2.5, 2.5, 0.25},    // cancer: dense fine hematoxylin
    {0.40, 0.45, 0.45, 0.40, 1.5, 1.5, 0.50},    // necrosis: mottled debris
    {0.01, 0.01, 0.00, 0.00, 8.0, 8.0, 2.00},    // background: never
};

std::vector<std::size_t> largest_remainder(const std::vector<double>& fractions, std::size_t total) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double exact = fractions[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    used += counts[k];
    rem.emplace_back(-(exact - std::floor(exact)), k);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t i = 0; used < total && i < rem.size(); ++i) {
    if (fractions[rem[i].second] <= 0.0) continue;
    ++counts[rem[i].second];
    ++used;
  }
  return counts;
}

}  // namespace

const char* class_name(std::size_t cls) {
  if (cls >= kNumClasses) throw ValidationError("class index out of range: " + std::to_string(cls));
  return kClassNames[cls];
}

std::size_t class_from_name(const std::string& name) {
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    if (name == kClassNames[k]) return k;
  }
  throw ValidationError("unknown tissue class '" + name + "'");
}

StainStyle style_from_string(const std::string& s) {
  if (s == "A") return StainStyle::A;
  if (s == "B") return StainStyle::B;
  throw ValidationError("unknown stain style '" + s + "' (expected A or B)");
}

std::string to_string(StainStyle s) { return s == StainStyle::A ? "A" : "B"; }

Vec3 hematoxylin_od() { return unit({0.5626, 0.7201, 0.4062}); }
Vec3 eosin_od() { return unit({0.2159, 0.8012, 0.5581}); }

const Mat3& style_b_mixing() {
  static const Mat3 m = {{{0.80, 0.20, 0.00}, {0.05, 0.80, 0.15}, {0.00, 0.35, 0.65}}};
  return m;
}

Composition grade_composition(int grade) {
  static const Composition table[5] = {
      {0.30, 0.45, 0.00, 0.10, 0.15}, {0.28, 0.40, 0.07, 0.10, 0.15}, {0.25, 0.30, 0.18, 0.12, 0.15},
      {0.20, 0.20, 0.33, 0.12, 0.15}, {0.15, 0.10, 0.48, 0.12, 0.15},
  };
  if (grade < 1 || grade > 5) throw ValidationError("grade must be in 1..5, got " + std::to_string(grade));
  return table[grade - 1];
}

void SlideSpec::validate() const {
  if (height < 32 || width < 32) throw ValidationError("slide dims must be at least 32x32");
  grade_composition(grade);
  if (!composition.empty()) {
    if (composition.size() != kNumClasses) throw ValidationError("composition needs 5 fractions");
    double s = 0;
    for (double f : composition) {
      if (f < 0) throw ValidationError("composition fractions must be nonnegative");
      s += f;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ValidationError("composition fractions must sum to 1");
  }
  if (stain_jitter < 0 || noise < 0) throw ValidationError("stain_jitter and noise must be nonnegative");
  if (regions < 1) throw ValidationError("regions must be positive");
}

Composition mask_composition(const std::vector<std::uint8_t>& mask) {
  Composition c{};
  for (auto m : mask) c[m] += 1.0;
  for (auto& v : c) v /= static_cast<double>(std::max<std::size_t>(mask.size(), 1));
  return c;
}

RasterImage render_mask(const std::vector<std::uint8_t>& mask, std::size_t height, std::size_t width,
                        StainStyle style, std::uint64_t seed, double stain_jitter, double noise, Vec3* h_used,
                        Vec3* e_used) {
  if (mask.size() != height * width) throw ValidationError("mask size does not match dimensions");
  Rng tex_rng(derive_seed(seed, 2));
  Vec3 hv = hematoxylin_od(), ev = eosin_od();
  double h_gain = 1.0, e_gain = 1.0;
  if (stain_jitter > 0) {
    for (auto& x : hv) x = std::max(0.01, x * (1 + stain_jitter * normal(tex_rng)));
    for (auto& x : ev) x = std::max(0.01, x * (1 + stain_jitter * normal(tex_rng)));
    hv = unit(hv);
    ev = unit(ev);
    h_gain = std::exp(stain_jitter * normal(tex_rng));
    e_gain = std::exp(stain_jitter * normal(tex_rng));
  }
  if (h_used) *h_used = hv;
  if (e_used) *e_used = ev;

  std::vector<ValueNoise> tex_h, tex_e;
  for (const auto& look : kLooks) {
    tex_h.emplace_back(height, width, look.scale_r, look.scale_c, tex_rng);
    tex_e.emplace_back(height, width, look.scale_r, look.scale_c, tex_rng);
  }

  ValueNoise nuclei(height, width, 3.0, 3.0, tex_rng);

  Rng noise_rng(derive_seed(seed, 3));
  const Mat3& mix = style_b_mixing();
  RasterImage img(height, width, 3);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t cls = mask[r * width + c];
      const ClassLook& look = kLooks[cls];
      double ch = h_gain * std::max(0.0, look.h + look.amp_h * tex_h[cls](r, c));
      double ce = e_gain * std::max(0.0, look.e + look.amp_e * tex_e[cls](r, c));
      if (nuclei(r, c) > look.nuclei) {
        ch = h_gain * 1.6;
        ce = 0.0;
      }
      Vec3 rgb;
      for (int k = 0; k < 3; ++k) rgb[k] = std::exp(-(ch * hv[k] + ce * ev[k]));
      if (style == StainStyle::B) {
        Vec3 m{};
        for (int i = 0; i < 3; ++i) m[i] = mix[i][0] * rgb[0] + mix[i][1] * rgb[1] + mix[i][2] * rgb[2];
        rgb = m;
      }
      for (int k = 0; k < 3; ++k) {
        const double n = noise > 0 ? normal(noise_rng, 0.0, noise) : 0.0;
        img.at(r, c, k) = std::clamp(rgb[k] + n, 0.0, 1.0);
      }
    }
  }
  return img;
}

Slide gen_slide(const SlideSpec& spec) {
  spec.validate();
  std::vector<double> frac = spec.composition;
  if (frac.empty()) {
    for (double f : grade_composition(spec.grade)) frac.push_back(f);
  }

  Rng geo(derive_seed(spec.seed, 1));
  const std::size_t n = spec.regions;
  std::vector<double> sr(n), sc(n);
  for (std::size_t i = 0; i < n; ++i) {
    sr[i] = uniform(geo, 0.0, static_cast<double>(spec.height));
    sc[i] = uniform(geo, 0.0, static_cast<double>(spec.width));
  }
  std::vector<std::uint8_t> region_class;
  const auto counts = largest_remainder(frac, n);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    for (std::size_t j = 0; j < counts[k]; ++j) region_class.push_back(static_cast<std::uint8_t>(k));
  }
  shuffle(region_class, geo);

  // Domain warp gives the Voronoi cells irregular borders.
  const double cell = std::sqrt(static_cast<double>(spec.height * spec.width) / static_cast<double>(n));
  ValueNoise warp_r(spec.height, spec.width, cell, cell, geo);
  ValueNoise warp_c(spec.height, spec.width, cell, cell, geo);
  const double amp = 0.35 * cell;

  Slide slide;
  slide.mask.resize(spec.height * spec.width);
  for (std::size_t r = 0; r < spec.height; ++r) {
    for (std::size_t c = 0; c < spec.width; ++c) {
      const double wr = r + amp * warp_r(r, c), wc = c + amp * warp_c(r, c);
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t i = 0; i < n; ++i) {
        const double dr = wr - sr[i], dc = wc - sc[i];
        const double d = dr * dr + dc * dc;
        if (d < best_d) best_d = d, best = i;
      }
      slide.mask[r * spec.width + c] = region_class[best];
    }
  }
  slide.image = render_mask(slide.mask, spec.height, spec.width, spec.style, spec.seed, spec.stain_jitter,
                            spec.noise, &slide.h_vector, &slide.e_vector);
  return slide;
}

}  // namespace histoprog::synthdata
