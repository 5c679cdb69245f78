#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "histoprog/common/error.hpp"
#include "histoprog/distill/distill.hpp"
#include "histoprog/gradcore/grad_check.hpp"
#include "histoprog/gradcore/mlp.hpp"

using namespace histoprog;
using namespace histoprog::distill;
namespace gc = histoprog::gradcore;

namespace {

Tensor random_tensor(gc::Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

std::vector<RasterImage> random_images(std::size_t n, Rng& rng) {
  std::vector<RasterImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    RasterImage img(kInputSize, kInputSize, 3);
    for (double& v : img.data) v = uniform(rng);
    out.push_back(std::move(img));
  }
  return out;
}

// Moves token t of the 4x4 grid to position perm[t].
RasterImage permute_tokens(const RasterImage& img, const std::vector<std::size_t>& perm) {
  RasterImage out(kInputSize, kInputSize, 3);
  for (std::size_t t = 0; t < kTokens; ++t) {
    const std::size_t sr = (t / 4) * kTokenSize, sc = (t % 4) * kTokenSize;
    const std::size_t dr = (perm[t] / 4) * kTokenSize, dc = (perm[t] % 4) * kTokenSize;
    for (std::size_t r = 0; r < kTokenSize; ++r) {
      for (std::size_t c = 0; c < kTokenSize; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) out.at(dr + r, dc + c, ch) = img.at(sr + r, sc + c, ch);
      }
    }
  }
  return out;
}

ParamSet random_disc(std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet d;
  gc::init_mlp(d, discriminator_spec(k), rng);
  return d;
}

void expect_grad_ok(const gc::ScalarFn& fn, const Tensor& point) {
  const auto report = gc::grad_check(fn, point, 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-4) << "worst " << report.worst_index << " analytic " << report.analytic
                                        << " numeric " << report.numeric;
}

struct Fixture {
  std::vector<RasterImage> images;
  std::vector<int> labels;
  TeacherOutputs teacher;
};

// Class patches with a synthetic teacher that is confident and mostly right.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    Rng rng(5);
    for (std::size_t i = 0; i < 40; ++i) {
      x.images.push_back(render_class_patch(i % 5, 100 + i));
      x.labels.push_back(static_cast<int>(i % 5));
    }
    x.teacher.logits = Tensor({40, 5});
    x.teacher.features = random_tensor({40, 12}, rng);
    for (std::size_t i = 0; i < 40; ++i) {
      for (std::size_t k = 0; k < 5; ++k) x.teacher.logits.at(i, k) = (k == i % 5 ? 3.0 : 0.0) + uniform(rng, -0.5, 0.5);
    }
    return x;
  }();
  return f;
}

DistillConfig small_config() {
  DistillConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 8;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------- TinyViT

TEST(TinyVit, AttentionRowsSumToOne) {
  Rng rng(1);
  const TinyVit m = init_tiny_vit({}, 3);
  const auto out = tiny_vit_forward(m, random_images(3, rng));
  ASSERT_EQ(out.attention.size(), 2u);
  for (const auto& a : out.attention) {
    EXPECT_EQ(a.shape(), (gc::Shape{3, 17, 17}));
    const Tensor& t = a.value();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  EXPECT_EQ(out.logits.shape(), (gc::Shape{3, 5}));
  EXPECT_EQ(out.features.shape(), (gc::Shape{3, 32}));
}

TEST(TinyVit, PermutationInvariantWithoutPositions) {
  Rng rng(2);
  TinyVitConfig cfg;
  cfg.positional = false;
  for (int trial = 0; trial < 10; ++trial) {
    const TinyVit m = init_tiny_vit(cfg, 10 + static_cast<std::uint64_t>(trial));
    const auto img = random_images(1, rng);
    std::vector<std::size_t> perm(kTokens);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    const Tensor a = tiny_vit_forward(m, img).logits.value();
    const Tensor b = tiny_vit_forward(m, {permute_tokens(img[0], perm)}).logits.value();
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
}

TEST(TinyVit, PositionsBreakPermutationInvariance) {
  Rng rng(3);
  const TinyVit m = init_tiny_vit({}, 11);
  const auto img = random_images(1, rng);
  std::vector<std::size_t> perm(kTokens);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  const Tensor a = tiny_vit_forward(m, img).logits.value();
  const Tensor b = tiny_vit_forward(m, {permute_tokens(img[0], perm)}).logits.value();
  double diff = 0;
  for (std::size_t k = 0; k < a.size(); ++k) diff = std::max(diff, std::abs(a[k] - b[k]));
  EXPECT_GT(diff, 1e-6);
}

TEST(TinyVit, DeterministicAndShapeChecked) {
  Rng rng(4);
  const auto imgs = random_images(2, rng);
  const TinyVit a = init_tiny_vit({}, 5), b = init_tiny_vit({}, 5);
  EXPECT_EQ(tiny_vit_forward(a, imgs).logits.value(), tiny_vit_forward(b, imgs).logits.value());
  EXPECT_THROW(tiny_vit_forward(a, {RasterImage(16, 32, 3)}), ValidationError);
  EXPECT_THROW(tiny_vit_forward_tokens(a, Tensor({15, kTokenDim})), ValidationError);
}

TEST(TinyVit, GradCheckThroughBlocks) {
  Rng rng(6);
  TinyVitConfig cfg;
  cfg.dim = 8;
  cfg.mlp_hidden = 8;
  cfg.blocks = 1;
  const TinyVit m = init_tiny_vit(cfg, 7);
  const Tensor tokens = tokenize(random_images(1, rng));
  const Tensor w = random_tensor({1, 5}, rng);
  for (const char* name : {"vit.b0.q", "vit.pos", "vit.embed.weight"}) {
    expect_grad_ok(
        [&](const Var& p) {
          TinyVit c = m;
          c.params = m.params.clone();
          c.params.at(name) = p;
          return gc::sum(gc::mul(tiny_vit_forward_tokens(c, tokens).logits, gc::constant(w)));
        },
        m.params.at(name).value());
  }
}

// ---------------------------------------------------------------- KD loss

TEST(KdLoss, EqualOutputsGiveZeroKl) {
  Rng rng(8);
  const Tensor t = random_tensor({6, 5}, rng, -3, 3);
  const auto disc = random_disc(5, 1);
  const auto loss = kd_gan_loss(gc::constant(t), t, {0, 1, 2, 3, 4, 0}, disc, KDConfig{});
  EXPECT_NEAR(loss.kl.value()[0], 0.0, 1e-12);
  EXPECT_GE(loss.ce.value()[0], 0.0);
}

TEST(KdLoss, KlNonNegativeAndPositiveWhenDifferent) {
  Rng rng(9);
  const auto disc = random_disc(5, 1);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor s = random_tensor({4, 5}, rng, -3, 3), t = random_tensor({4, 5}, rng, -3, 3);
    EXPECT_GT(kd_gan_loss(gc::constant(s), t, {-1, -1, -1, -1}, disc, KDConfig{}).kl.value()[0], 0.0);
  }
}

TEST(KdLoss, ZeroWeightsLeavePlainCe) {
  Rng rng(10);
  const Tensor s = random_tensor({5, 5}, rng), t = random_tensor({5, 5}, rng);
  KDConfig cfg;
  cfg.alpha1 = cfg.alpha2 = 0;
  const auto loss = kd_gan_loss(gc::constant(s), t, {0, 4, 2, 1, 3}, random_disc(5, 2), cfg);
  EXPECT_EQ(loss.total.value()[0], loss.ce.value()[0]);
  double ce = 0;
  const std::vector<int> lab{0, 4, 2, 1, 3};
  for (std::size_t i = 0; i < 5; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(s.at(i, k));
    ce += std::log(z) - s.at(i, static_cast<std::size_t>(lab[i]));
  }
  EXPECT_NEAR(loss.ce.value()[0], ce / 5, 1e-12);
}

TEST(KdLoss, WeightedSumAndGradCheck) {
  Rng rng(11);
  const auto disc = random_disc(5, 3);
  const std::vector<int> labels{1, -1, 3, 0};
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = random_tensor({4, 5}, rng, -2, 2);
    const auto l = kd_gan_loss(gc::constant(random_tensor({4, 5}, rng)), t, labels, disc, KDConfig{});
    EXPECT_NEAR(l.total.value()[0], l.ce.value()[0] + 0.5 * l.kl.value()[0] + 0.1 * l.gan.value()[0], 1e-12);
    expect_grad_ok([&](const Var& s) { return kd_gan_loss(s, t, labels, disc, KDConfig{}).total; },
                   random_tensor({4, 5}, rng, -2, 2));
  }
}

TEST(KdLoss, DiscriminatorLossGradCheck) {
  Rng rng(12);
  const auto disc = random_disc(5, 4);
  const Var t = gc::softmax_rows(gc::constant(random_tensor({3, 5}, rng)));
  expect_grad_ok([&](const Var& s) { return discriminator_loss(disc, gc::softmax_rows(s), t); },
                 random_tensor({3, 5}, rng));
}

TEST(KdLoss, Errors) {
  const auto disc = random_disc(5, 1);
  Tensor bad({1, 5}, 0.0);
  bad[2] = NAN;
  EXPECT_THROW(kd_gan_loss(gc::constant(Tensor({1, 5}, 0.0)), bad, {0}, disc, KDConfig{}), ValidationError);
  EXPECT_THROW(kd_gan_loss(gc::constant(Tensor({1, 5}, 0.0)), Tensor({1, 4}, 0.0), {0}, disc, KDConfig{}), ValidationError);
  EXPECT_THROW(kd_gan_loss(gc::constant(Tensor({1, 5}, 0.0)), Tensor({1, 5}, 0.0), {5}, disc, KDConfig{}), ValidationError);
}

// --------------------------------------------------------------------- CRD

TEST(Crd, OrthogonalNegativeClosedForm) {
  const Var s = gc::constant(Tensor({1, 2}, {1, 0}));
  const Var neg = gc::constant(Tensor({1, 1, 2}, {0, 1}));
  EXPECT_NEAR(crd_loss(s, s, neg, 1.0).value()[0], -std::log(std::exp(1.0) / (std::exp(1.0) + 1)), 1e-12);
  EXPECT_NEAR(crd_loss(s, s, neg, 1.0).value()[0], 0.3133, 5e-5);
}

TEST(Crd, UninformativePositiveIsLnNPlusOne) {
  Rng rng(13);
  for (std::size_t n : {1u, 3u, 7u}) {
    const Tensor a = random_tensor({2, 6}, rng);
    Tensor neg({2, n, 6});
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < n; ++j) std::copy_n(&a.at(i, 0), 6, &neg[(i * n + j) * 6]);
    }
    EXPECT_NEAR(crd_loss(gc::constant(random_tensor({2, 6}, rng)), gc::constant(a), gc::constant(neg), 0.07).value()[0],
                std::log(static_cast<double>(n + 1)), 1e-9);
  }
}

TEST(Crd, DecreasesAlongGeodesicTowardAnchor) {
  Rng rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const double phi = uniform(rng, 0, 6.283185307179586);
    const std::size_t n = 1 + uniform_index(rng, 4);
    const double tau = uniform(rng, 0.05, 1.0);
    const Tensor a({1, 2}, {std::cos(phi), std::sin(phi)});
    Tensor neg({1, n, 2});
    for (std::size_t j = 0; j < n; ++j) {
      neg[2 * j] = -a[0];
      neg[2 * j + 1] = -a[1];
    }
    double prev = INFINITY;
    for (int step = 0; step <= 8; ++step) {
      const double theta = 3.0 * (1.0 - step / 8.0);
      const Tensor s({1, 2}, {std::cos(phi + theta), std::sin(phi + theta)});
      const double l = crd_loss(gc::constant(s), gc::constant(a), gc::constant(neg), tau).value()[0];
      EXPECT_LT(l, prev);
      prev = l;
    }
  }
}

TEST(Crd, GradCheckAndErrors) {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const Var a = gc::constant(random_tensor({3, 5}, rng)), neg = gc::constant(random_tensor({3, 2, 5}, rng));
    expect_grad_ok([&](const Var& s) { return crd_loss(s, a, neg, 0.5); }, random_tensor({3, 5}, rng));
  }
  const Var z = gc::constant(Tensor({1, 2}, 0.0)), one = gc::constant(Tensor({1, 2}, {1, 0}));
  EXPECT_THROW(crd_loss(z, one, gc::constant(Tensor({1, 1, 2}, {0, 1})), 0.07), ValidationError);
  EXPECT_THROW(crd_loss(one, one, gc::constant(Tensor({1, 1, 3})), 0.07), ValidationError);
  EXPECT_THROW(crd_loss(one, one, gc::constant(Tensor({1, 1, 2}, {0, 1})), 0.0), ValidationError);
}

// ---------------------------------------------------------------- training

TEST(Distill, ZeroWeightsMatchPlainSupervisedTrace) {
  const auto& f = fixture();
  DistillConfig cfg = small_config();
  cfg.kd.alpha1 = cfg.kd.alpha2 = cfg.kd.lambda = 0;
  const auto kd = train_distilled(f.images, f.labels, f.teacher, cfg);
  const auto plain = train_supervised_student(f.images, f.labels, cfg);
  ASSERT_EQ(kd.curve.rows.size(), plain.curve.rows.size());
  for (std::size_t e = 0; e < kd.curve.rows.size(); ++e) EXPECT_EQ(kd.curve.rows[e][1], plain.curve.rows[e][1]);
  EXPECT_EQ(gc::checkpoint_hash(kd.checkpoint), gc::checkpoint_hash(plain.checkpoint));
}

TEST(Distill, DeterministicAndCheckpointRoundTrip) {
  const auto& f = fixture();
  const auto a = train_distilled(f.images, f.labels, f.teacher, small_config());
  const auto b = train_distilled(f.images, f.labels, f.teacher, small_config());
  EXPECT_EQ(a.curve.str(), b.curve.str());
  EXPECT_EQ(gc::checkpoint_hash(a.checkpoint), gc::checkpoint_hash(b.checkpoint));
  const TinyVit m = vit_from_checkpoint(gc::deserialize(gc::serialize(a.checkpoint)));
  EXPECT_EQ(student_probs(m, f.images), student_probs(a.student, f.images));
  for (const auto& row : a.curve.rows) {
    EXPECT_TRUE(std::isfinite(std::stod(row[1])));
    EXPECT_GT(std::stod(row[5]), 0.0);  // CRD active
  }
}

TEST(Distill, RejectsMismatchedTeacher) {
  const auto& f = fixture();
  TeacherOutputs t = f.teacher;
  t.logits = Tensor({39, 5}, 0.0);
  EXPECT_THROW(train_distilled(f.images, f.labels, t, small_config()), ValidationError);
  t = f.teacher;
  t.logits[7] = INFINITY;
  EXPECT_THROW(train_distilled(f.images, f.labels, t, small_config()), ValidationError);
  EXPECT_THROW(train_distilled(f.images, {0}, f.teacher, small_config()), ValidationError);
}

// ------------------------------------------------------------ cohort glue

TEST(CohortGlue, RenderedPatchIsSingleClassAndSeeded) {
  const RasterImage a = render_class_patch(2, 9), b = render_class_patch(2, 9);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.height, kInputSize);
  EXPECT_THROW(render_class_patch(5, 1), ValidationError);
}

TEST(CohortGlue, FeaturesSplitBackPerLesion) {
  synthdata::CohortSpec cs;
  cs.seed = 3;
  cs.n_patients = 6;
  const auto cohort = synthdata::gen_cohort(cs);
  const auto imgs = render_cohort_patches(cohort, 1);
  Tensor feats({imgs.size(), 2});
  for (std::size_t i = 0; i < imgs.size(); ++i) feats.at(i, 0) = static_cast<double>(i);
  const auto pts = patients_with_features(cohort, feats);
  double expect = 0;
  for (const auto& p : pts) {
    for (const auto& l : p.lesions) {
      EXPECT_EQ(l.at(0, 0), expect);
      expect += static_cast<double>(l.rows());
    }
  }
  EXPECT_THROW(patients_with_features(cohort, Tensor({imgs.size() - 1, 2})), ValidationError);
}

TEST(CohortGlue, ComparisonCsvLayout) {
  const auto t = comparison_csv({{"teacher", "weighted", "OS", {0.8, 0.75, 0.85}}});
  EXPECT_EQ(t.header, (std::vector<std::string>{"model", "aggregation_strategy", "endpoint", "c_index", "ci_low", "ci_high"}));
  EXPECT_EQ(t.rows[0][3], "0.8000");
}
