#include <gtest/gtest.h>

#include <cmath>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/grad_check.hpp"
#include "histoprog/stainlab/color.hpp"
#include "histoprog/stainlab/macenko.hpp"
#include "histoprog/stainlab/metrics.hpp"
#include "histoprog/stainlab/style.hpp"
#include "histoprog/synthdata/synthdata.hpp"

using namespace histoprog;
using namespace histoprog::stainlab;
namespace gc = histoprog::gradcore;
using gc::Tensor;

namespace {

RasterImage random_image(std::size_t h, std::size_t w, std::size_t ch, Rng& rng) {
  RasterImage img(h, w, ch);
  for (double& v : img.data) v = uniform(rng, 0.0, 1.0);
  return img;
}

Tensor random_tensor(gc::Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Straight transcription of the windowed SSIM formula.
double ssim_oracle(const RasterImage& x, const RasterImage& y) {
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (std::size_t r0 = 0; r0 + 8 <= x.height; r0 += 4) {
    for (std::size_t c0 = 0; c0 + 8 <= x.width; c0 += 4) {
      double mx = 0, my = 0;
      for (std::size_t r = r0; r < r0 + 8; ++r)
        for (std::size_t c = c0; c < c0 + 8; ++c) mx += x.at(r, c, 0), my += y.at(r, c, 0);
      mx /= 64, my /= 64;
      double vx = 0, vy = 0, cv = 0;
      for (std::size_t r = r0; r < r0 + 8; ++r)
        for (std::size_t c = c0; c < c0 + 8; ++c) {
          vx += (x.at(r, c, 0) - mx) * (x.at(r, c, 0) - mx);
          vy += (y.at(r, c, 0) - my) * (y.at(r, c, 0) - my);
          cv += (x.at(r, c, 0) - mx) * (y.at(r, c, 0) - my);
        }
      vx /= 64, vy /= 64, cv /= 64;
      total += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

double channel_mean_abs_diff(const RasterImage& a, const RasterImage& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

void expect_grad_ok(const gc::ScalarFn& fn, const Tensor& point, double tol = 1e-4) {
  const auto report = gc::grad_check(fn, point, 1e-5);
  EXPECT_LT(report.max_rel_error, tol) << "worst " << report.worst_index << " analytic " << report.analytic
                                       << " numeric " << report.numeric;
}

ParamSet small_classifier(std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  gc::init_mlp(p, classifier_pixel_spec(), rng);
  gc::init_mlp(p, classifier_head_spec(), rng);
  return p;
}

synthdata::Slide small_slide(std::uint64_t seed, synthdata::StainStyle style, int grade = 3, double noise = 0.01) {
  synthdata::SlideSpec sp;
  sp.seed = seed;
  sp.height = sp.width = 128;
  sp.regions = 20;
  sp.grade = grade;
  sp.style = style;
  sp.noise = noise;
  return synthdata::gen_slide(sp);
}

}  // namespace

// ------------------------------------------------------------------ color

TEST(Lab, WhiteAndBlack) {
  const auto white = rgb_to_lab(std::array<double, 3>{1, 1, 1});
  EXPECT_NEAR(white[0], 100.0, 1e-9);
  EXPECT_NEAR(white[1], 0.0, 1e-9);
  EXPECT_NEAR(white[2], 0.0, 1e-9);
  const auto black = rgb_to_lab(std::array<double, 3>{0, 0, 0});
  for (double v : black) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Lab, RandomRoundTrip) {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const RasterImage img = random_image(16, 16, 3, rng);
    const RasterImage back = rgb_lab_roundtrip(img);
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-6);
  }
}

TEST(Reinhard, OwnStatsIsIdentity) {
  Rng rng(4);
  const RasterImage img = random_image(16, 16, 3, rng);
  const RasterImage out = reinhard_normalize(img, lab_stats(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(out.data[i], img.data[i], 1e-6);
}

TEST(Reinhard, LightnessShiftIsRemoved) {
  Rng rng(5);
  RasterImage lab = rgb_to_lab(random_image(12, 12, 3, rng));
  RasterImage shifted = lab;
  for (std::size_t i = 0; i < shifted.data.size(); i += 3) shifted.data[i] += 7.5;
  const LabStats target{{60, 10, -5}, {12, 6, 4}};
  const RasterImage a = reinhard_lab(lab, target), b = reinhard_lab(shifted, target);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-9);
}

TEST(Reinhard, TwoColorImageMatchesTargetStats) {
  RasterImage img(8, 8, 3);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      const bool left = c < 4;
      img.at(r, c, 0) = left ? 0.8 : 0.3;
      img.at(r, c, 1) = left ? 0.2 : 0.5;
      img.at(r, c, 2) = left ? 0.6 : 0.1;
    }
  const LabStats target{{55, 12, -8}, {9, 5, 3}};
  const LabStats got = lab_stats_of_lab(reinhard_lab(rgb_to_lab(img), target));
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(got.mean[k], target.mean[k], 1e-6);
    EXPECT_NEAR(got.std[k], target.std[k], 1e-6);
  }
}

TEST(Reinhard, ConstantChannelIsRejected) {
  const RasterImage flat(8, 8, 3, 0.5);
  try {
    reinhard_normalize(flat, {{50, 0, 0}, {10, 5, 5}});
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate channel"), std::string::npos);
  }
}

TEST(Reinhard, StatsJsonRoundTrip) {
  const LabStats s{{61.5, 11.25, -3.0}, {10.0, 4.5, 2.25}};
  const LabStats back = lab_stats_from_json(lab_stats_json(s));
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.std, s.std);
}

// ---------------------------------------------------------------- macenko

TEST(Macenko, RecoversGeneratorBasis) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto slide = small_slide(seed, synthdata::StainStyle::A, 1 + static_cast<int>(seed % 5));
    const StainBasis b = estimate_stain_basis(slide.image);
    EXPECT_LT(angle_degrees(b.h, slide.h_vector), 5.0) << "seed " << seed;
    EXPECT_LT(angle_degrees(b.e, slide.e_vector), 5.0) << "seed " << seed;
    for (const auto* v : {&b.h, &b.e}) {
      EXPECT_NEAR(std::hypot((*v)[0], (*v)[1], (*v)[2]), 1.0, 1e-12);
      for (double x : *v) EXPECT_GE(x, 0.0);
    }
  }
}

TEST(Macenko, SelfNormalizationIsIdentity) {
  const auto slide = small_slide(7, synthdata::StainStyle::A, 3, 0.0);
  const StainBasis own = estimate_stain_basis(slide.image);
  const auto res = macenko_normalize(slide.image, own);
  for (std::size_t i = 0; i < res.image.data.size(); ++i) ASSERT_NEAR(res.image.data[i], slide.image.data[i], 0.01);
}

TEST(Macenko, BackgroundOnlyIsRejected) {
  try {
    estimate_stain_basis(RasterImage(32, 32, 3, 1.0));
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("background-only image"), std::string::npos);
  }
}

TEST(Macenko, BasisJsonRoundTrip) {
  const StainBasis b{{0.6, 0.7, 0.387298334620742}, {0.2, 0.8, 0.565685424949238}, {1.25, 0.75}};
  const StainBasis back = stain_basis_from_json(stain_basis_json(b));
  EXPECT_EQ(back.h, b.h);
  EXPECT_EQ(back.e, b.e);
  EXPECT_EQ(back.max_conc, b.max_conc);
}

// ---------------------------------------------------------------- metrics

TEST(Ssim, IdentitySymmetryAndOracle) {
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const RasterImage x = random_image(24, 20, 1, rng), y = random_image(24, 20, 1, rng);
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(ssim(x, y), ssim(y, x));
    EXPECT_NEAR(ssim(x, y), ssim_oracle(x, y), 1e-12);
    EXPECT_LE(std::abs(ssim(x, y)), 1.0);
  }
}

TEST(Ssim, RotationInvariant) {
  Rng rng(9);
  const RasterImage x = random_image(16, 16, 1, rng), y = random_image(16, 16, 1, rng);
  auto rot = [](const RasterImage& a) {
    RasterImage r(a.width, a.height, 1);
    for (std::size_t i = 0; i < a.height; ++i)
      for (std::size_t j = 0; j < a.width; ++j) r.at(j, a.height - 1 - i, 0) = a.at(i, j, 0);
    return r;
  };
  EXPECT_NEAR(ssim(rot(x), rot(y)), ssim(x, y), 1e-12);
}

TEST(Ssim, InvertedBinaryIsNegative) {
  RasterImage x(8, 16, 1);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 8; c < 16; ++c) x.at(r, c, 0) = 1.0;
  RasterImage y = x;
  for (double& v : y.data) v = 1.0 - v;
  EXPECT_LT(ssim(x, y), 0.0);
}

TEST(Ssim, ShapeMismatchIsRejected) {
  EXPECT_THROW(ssim(RasterImage(8, 8, 1), RasterImage(8, 12, 1)), ValidationError);
}

TEST(Pcc, AffineAndNegation) {
  Rng rng(10);
  const RasterImage x = random_image(10, 10, 1, rng);
  RasterImage ax = x, neg = x;
  for (double& v : ax.data) v = 0.3 * v + 0.2;
  for (double& v : neg.data) v = 1.0 - v;
  EXPECT_NEAR(pcc(x, x), 1.0, 1e-12);
  EXPECT_NEAR(pcc(x, ax), 1.0, 1e-12);
  EXPECT_NEAR(pcc(x, neg), -1.0, 1e-12);
}

TEST(Pcc, ConstantImageIsRejected) {
  Rng rng(11);
  try {
    pcc(random_image(8, 8, 1, rng), RasterImage(8, 8, 1, 0.4));
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("constant image"), std::string::npos);
  }
}

TEST(Recon, SmallNoiseGivesSmallPositiveLoss) {
  const auto slide = small_slide(12, synthdata::StainStyle::A);
  Rng rng(12);
  RasterImage noisy = slide.image;
  for (double& v : noisy.data) v = std::clamp(v + normal(rng, 0.0, 0.01), 0.0, 1.0);
  EXPECT_DOUBLE_EQ(recon_loss(slide.image, slide.image), 0.0);
  const double l = recon_loss(slide.image, noisy);
  EXPECT_GT(l, 0.0);
  EXPECT_LT(l, 0.2);
}

TEST(Recon, VarVersionMatchesImageVersion) {
  Rng rng(13);
  const RasterImage x = random_image(16, 16, 1, rng), y = random_image(16, 16, 1, rng);
  const gc::Var v = recon_loss(gc::constant(Tensor({1, 256}, x.data)), gc::constant(Tensor({1, 256}, y.data)), 16, 16);
  EXPECT_NEAR(v.value().item(), 1.0 - ssim(x, y), 1e-12);
}

TEST(GradCheck, SsimBothArguments) {
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = random_tensor({2, 12 * 16}, rng, 0.0, 1.0);
    const Tensor y = random_tensor({2, 12 * 16}, rng, 0.0, 1.0);
    expect_grad_ok([&](const gc::Var& v) { return recon_loss(gc::constant(x), v, 12, 16); }, y);
    expect_grad_ok([&](const gc::Var& v) { return recon_loss(v, gc::constant(y), 12, 16); }, x);
  }
}

TEST(GradCheck, BlockPoolAndGeneratorLoss) {
  Rng rng(15);
  for (int t = 0; t < 20; ++t) {
    ParamSet disc;
    gc::init_mlp(disc, discriminator_spec(), rng);
    const Tensor fake = random_tensor({2 * 16 * 16, 3}, rng, 0.0, 1.0);
    expect_grad_ok(
        [&](const gc::Var& v) {
          return adversarial_losses(gc::constant(Tensor({1, 1}, 0.5)), discriminate(disc, v, 2, 16, 16)).g_loss;
        },
        fake);
  }
}

TEST(GradCheck, DiscriminatorLoss) {
  Rng rng(16);
  for (int t = 0; t < 20; ++t) {
    const Tensor real = random_tensor({3, 1}, rng, 0.05, 0.95);
    const Tensor fake = random_tensor({4, 1}, rng, 0.05, 0.95);
    expect_grad_ok([&](const gc::Var& v) { return adversarial_losses(v, gc::constant(fake)).d_loss; }, real);
    expect_grad_ok([&](const gc::Var& v) { return adversarial_losses(gc::constant(real), v).d_loss; }, fake);
  }
}

TEST(GradCheck, FeaturePreservingLoss) {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    const ParamSet fhat = small_classifier(100 + t);
    const Tensor ref = random_tensor({2 * 16, 3}, rng, 0.0, 1.0);
    const Tensor gen = random_tensor({2 * 16, 3}, rng, 0.0, 1.0);
    expect_grad_ok(
        [&](const gc::Var& v) { return feature_preserving_loss(fhat, gc::constant(ref), v, 2, 2.0); }, gen);
  }
}

TEST(Adversarial, Examples) {
  const auto half = adversarial_losses(gc::constant(Tensor({4, 1}, 0.5)), gc::constant(Tensor({4, 1}, 0.5)));
  EXPECT_NEAR(half.d_loss.value().item(), 2 * std::log(2.0), 1e-12);
  const auto sharp = adversarial_losses(gc::constant(Tensor({1, 1}, 0.99)), gc::constant(Tensor({1, 1}, 0.01)));
  EXPECT_NEAR(sharp.d_loss.value().item(), -2 * std::log(0.99), 1e-12);
  EXPECT_NEAR(sharp.d_loss.value().item(), 0.0201, 1e-4);
  const auto clamped = adversarial_losses(gc::constant(Tensor({1, 1}, 1.0)), gc::constant(Tensor({1, 1}, 0.0)));
  EXPECT_TRUE(std::isfinite(clamped.d_loss.value().item()));
  EXPECT_TRUE(std::isfinite(clamped.g_loss.value().item()));
}

TEST(FeaturePreserving, KlExampleAndGibbs) {
  EXPECT_NEAR(kl_divergence({0.5, 0.5}, {0.9, 0.1}), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-15);
  EXPECT_NEAR(kl_divergence({0.5, 0.5}, {0.9, 0.1}), 0.5108, 1e-4);
  Rng rng(18);
  const ParamSet fhat = small_classifier(5);
  for (int t = 0; t < 100; ++t) {
    const gc::Var a = gc::constant(random_tensor({3 * 8, 3}, rng, 0.0, 1.0));
    const gc::Var b = gc::constant(random_tensor({3 * 8, 3}, rng, 0.0, 1.0));
    EXPECT_GE(feature_preserving_loss(fhat, a, b, 3, 2.0).value().item(), 0.0);
    EXPECT_NEAR(feature_preserving_loss(fhat, a, a, 3, 2.0).value().item(), 0.0, 1e-15);
  }
}

TEST(FeaturePreserving, NonFiniteFeaturesAreRejected) {
  Tensor bad({1, 4}, 0.0);
  bad[2] = std::nan("");
  EXPECT_THROW(softened_kl(gc::constant(bad), gc::constant(Tensor({1, 4}, 0.0)), 2.0), RuntimeFailure);
}

// ------------------------------------------------------------------ style

TEST(Style, GrayNormalizerStandardizes) {
  const auto slide = small_slide(19, synthdata::StainStyle::B);
  const RasterImage g = gray_normalize(slide.image);
  EXPECT_EQ(g.channels, 1u);
  const RasterImage c = gray_normalize(RasterImage(8, 8, 3, 0.3));
  for (double v : c.data) EXPECT_EQ(v, 0.6);
}

TEST(Style, TwinsShareGrayStructure) {
  const auto a = small_slide(20, synthdata::StainStyle::A), b = small_slide(20, synthdata::StainStyle::B);
  EXPECT_GT(ssim(gray_normalize(a.image), gray_normalize(b.image)), 0.95);
}

TEST(Style, ConstantInputGivesConstantOutput) {
  Rng rng(21);
  StyleModel m;
  gc::init_mlp(m.colorizer, colorizer_spec(), rng);
  const RasterImage out = normalize_image(m, RasterImage(8, 8, 3, 0.42));
  for (std::size_t i = 3; i < out.data.size(); ++i) EXPECT_EQ(out.data[i], out.data[i % 3]);
}

TEST(Style, BlockPoolAveragesBlocks) {
  Tensor px({16 * 16, 3});
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c)
      for (std::size_t k = 0; k < 3; ++k) px.at(r * 16 + c, k) = static_cast<double>(r * 16 + c) + 1000.0 * k;
  const Tensor out = block_mean_pool(gc::constant(px), 1, 16, 16).value();
  ASSERT_EQ(out.shape(), (gc::Shape{1, 192}));
  // block (1,2) covers rows 2-3, cols 4-5
  const double expect = (2 * 16 + 4 + 2 * 16 + 5 + 3 * 16 + 4 + 3 * 16 + 5) / 4.0;
  EXPECT_DOUBLE_EQ(out[(1 * 8 + 2) * 3 + 0], expect);
  EXPECT_DOUBLE_EQ(out[(1 * 8 + 2) * 3 + 2], expect + 2000.0);
  EXPECT_THROW(block_mean_pool(gc::constant(Tensor({12 * 12, 3})), 1, 12, 12), ValidationError);
}

TEST(Style, TrainingIsDeterministicAndRecordsCurve) {
  StyleDataset ds;
  std::vector<TumorTile> tiles;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto a = small_slide(30 + s, synthdata::StainStyle::A), b = small_slide(40 + s, synthdata::StainStyle::B);
    for (std::size_t r = 0; r < 128; r += 32) {
      for (std::size_t c = 0; c < 128; c += 32) {
        ds.style_a.push_back(crop(a.image, r, c, 32, 32));
        ds.style_b.push_back(crop(b.image, r, c, 32, 32));
        tiles.push_back({ds.style_a.back(), a.mask_at(r + 16, c + 16) == synthdata::kCancer ? 1 : 0});
      }
    }
  }
  ClassifierConfig cc;
  cc.epochs = 2;
  const ParamSet fhat = train_tumor_classifier(tiles, cc);
  StyleConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  const auto r1 = train_style_transfer(ds, fhat, cfg);
  const auto r2 = train_style_transfer(ds, fhat, cfg);
  EXPECT_EQ(gc::checkpoint_hash(r1.checkpoint), gc::checkpoint_hash(r2.checkpoint));
  EXPECT_EQ(r1.curve.rows.size(), 3u);
  EXPECT_EQ(r1.curve.header, (std::vector<std::string>{"epoch", "l_gan", "l_recon", "l_fp", "total"}));

  const StyleModel back = style_from_checkpoint(r1.checkpoint);
  const RasterImage o1 = normalize_image(r1.model, ds.style_b[0]), o2 = normalize_image(back, ds.style_b[0]);
  EXPECT_EQ(o1.data, o2.data);
  EXPECT_LT(channel_mean_abs_diff(o1, normalize_image(back, o1)), 0.05);
}

TEST(Style, InvalidDatasetsAreRejected) {
  StyleDataset ds;
  ds.style_a.push_back(RasterImage(16, 16, 3, 0.5));
  const ParamSet fhat = small_classifier(1);
  EXPECT_THROW(train_style_transfer(ds, fhat, {}), ValidationError);
  ds.style_b.push_back(RasterImage(16, 16, 3, 0.5));
  StyleConfig cfg;
  cfg.gamma = -1;
  EXPECT_THROW(train_style_transfer(ds, fhat, cfg), ValidationError);
}

TEST(Style, DivergenceCarriesLastStableCheckpoint) {
  StyleDataset ds;
  Rng rng(22);
  for (int i = 0; i < 4; ++i) {
    ds.style_a.push_back(random_image(16, 16, 3, rng));
    ds.style_b.push_back(random_image(16, 16, 3, rng));
  }
  StyleConfig cfg;
  cfg.epochs = 2;
  cfg.divergence_threshold = 1e-9;
  try {
    train_style_transfer(ds, small_classifier(2), cfg);
    FAIL() << "expected divergence";
  } catch (const gc::DivergenceError& e) {
    EXPECT_EQ(e.last_stable().meta("kind"), "style");
  }
}

TEST(ColorMetric, ClassDistanceOfIdenticalSetsIsZero) {
  const auto s = small_slide(23, synthdata::StainStyle::A);
  const ClassLab a = class_mean_lab({s.image}, {s.mask});
  EXPECT_DOUBLE_EQ(class_color_distance(a, a), 0.0);
  const auto b = small_slide(23, synthdata::StainStyle::B);
  EXPECT_GT(class_color_distance(a, class_mean_lab({b.image}, {b.mask})), 1.0);
}
