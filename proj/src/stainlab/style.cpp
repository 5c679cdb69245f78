#include "histoprog/stainlab/style.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/optim.hpp"
#include "histoprog/gradcore/rng.hpp"
#include "histoprog/stainlab/color.hpp"
#include "histoprog/stainlab/metrics.hpp"

namespace histoprog::stainlab {

namespace gc = histoprog::gradcore;
using gc::Activation;
using gc::Tensor;

gc::MlpSpec colorizer_spec() {
  return {"zeta", {1, 16, 16, 3}, {Activation::relu, Activation::relu, Activation::sigmoid}};
}

gc::MlpSpec discriminator_spec() {
  return {"disc", {kPoolGrid * kPoolGrid * 3, 32, 1}, {Activation::relu, Activation::sigmoid}};
}

gc::MlpSpec classifier_pixel_spec() { return {"fhat.px", {3, kClassifierWidth}, {Activation::relu}}; }
gc::MlpSpec classifier_head_spec() { return {"fhat.head", {kClassifierWidth, 2}, {Activation::identity}}; }

RasterImage gray_normalize(const RasterImage& img) {
  RasterImage g = to_gray(img);
  const double n = static_cast<double>(g.data.size());
  const double mean = std::accumulate(g.data.begin(), g.data.end(), 0.0) / n;
  double var = 0;
  for (double v : g.data) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : g.data) v = sd > 1e-12 ? std::clamp(0.6 + 0.2 * (v - mean) / sd, 0.0, 1.0) : 0.6;
  return g;
}

ImageBatch make_batch(const std::vector<const RasterImage*>& images) {
  if (images.empty()) throw ValidationError("empty image batch");
  ImageBatch b{images.size(), images[0]->height, images[0]->width, {}};
  std::vector<double> rows;
  rows.reserve(b.batch * b.height * b.width * 3);
  for (const RasterImage* img : images) {
    if (img->height != b.height || img->width != b.width || img->channels != 3) {
      throw ValidationError("image batch needs equally sized RGB images");
    }
    rows.insert(rows.end(), img->data.begin(), img->data.end());
  }
  b.pixels = Tensor({b.batch * b.height * b.width, 3}, std::move(rows));
  return b;
}

Var colorize(const ParamSet& zeta, const Var& gray_rows) { return gc::mlp_forward(zeta, gray_rows, colorizer_spec()); }

Var rgb_to_gray_rows(const Var& rgb_rows, std::size_t batch) {
  static const Tensor w({3, 1}, {0.299, 0.587, 0.114});
  const std::size_t n = rgb_rows.value().rows();
  return gc::reshape(gc::matmul(rgb_rows, gc::constant(w)), {batch, n / batch});
}

Var block_mean_pool(const Var& rgb_rows, std::size_t batch, std::size_t height, std::size_t width) {
  if (height % kPoolGrid != 0 || width % kPoolGrid != 0) {
    throw ValidationError("image size must be a multiple of " + std::to_string(kPoolGrid));
  }
  const Tensor& x = rgb_rows.value();
  if (x.rows() != batch * height * width || x.cols() != 3) throw ValidationError("block_mean_pool: bad input shape");
  const std::size_t bh = height / kPoolGrid, bw = width / kPoolGrid;
  const double inv = 1.0 / static_cast<double>(bh * bw);
  const std::size_t out_cols = kPoolGrid * kPoolGrid * 3;
  auto cell = [=](std::size_t r, std::size_t c) { return ((r / bh) * kPoolGrid + c / bw) * 3; };
  Tensor out({batch, out_cols});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double* px = &x[((b * height + r) * width + c) * 3];
        double* o = &out[b * out_cols + cell(r, c)];
        for (int k = 0; k < 3; ++k) o[k] += px[k] * inv;
      }
    }
  }
  return gc::make_op(
      std::move(out), {rgb_rows},
      [=](gc::Node& self) {
        Tensor& g = self.parents[0].node()->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t r = 0; r < height; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
              const double* go = &self.grad[b * out_cols + cell(r, c)];
              double* gx = &g[((b * height + r) * width + c) * 3];
              for (int k = 0; k < 3; ++k) gx[k] += go[k] * inv;
            }
          }
        }
      },
      "block_mean_pool");
}

Var discriminate(const ParamSet& disc, const Var& rgb_rows, std::size_t batch, std::size_t height, std::size_t width) {
  return gc::mlp_forward(disc, block_mean_pool(rgb_rows, batch, height, width), discriminator_spec());
}

Var classifier_features(const ParamSet& fhat, const Var& rgb_rows, std::size_t batch) {
  const std::size_t n = rgb_rows.value().rows();
  if (batch == 0 || n % batch != 0) throw ValidationError("classifier_features: rows not divisible by batch");
  const std::size_t per = n / batch;
  Var hidden = gc::mlp_forward(fhat, rgb_rows, classifier_pixel_spec());
  Var pool = gc::constant(Tensor({batch, 1, per}, 1.0 / static_cast<double>(per)));
  return gc::reshape(gc::bmm(pool, gc::reshape(hidden, {batch, per, kClassifierWidth})), {batch, kClassifierWidth});
}

Var classifier_logits(const ParamSet& fhat, const Var& features) {
  return gc::mlp_forward(fhat, features, classifier_head_spec());
}

AdversarialLosses adversarial_losses(const Var& d_real, const Var& d_fake) {
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  Var ln_real = gc::log(gc::clamp(d_real, lo, hi));
  Var ln_fake_neg = gc::log(gc::add_scalar(gc::neg(gc::clamp(d_fake, lo, hi)), 1.0));
  Var ln_fake = gc::log(gc::clamp(d_fake, lo, hi));
  return {gc::neg(gc::add(gc::mean(ln_real), gc::mean(ln_fake_neg))), gc::neg(gc::mean(ln_fake))};
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ValidationError("kl_divergence: length mismatch");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

Var softened_kl(const Var& ref_features, const Var& gen_features, double temperature) {
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
  if (!ref_features.value().all_finite() || !gen_features.value().all_finite()) {
    throw RuntimeFailure("non-finite features in feature-preserving loss");
  }
  const double inv = 1.0 / temperature;
  Var log_p = gc::log_softmax_rows(gc::scale(ref_features, inv));
  Var log_q = gc::log_softmax_rows(gc::scale(gen_features, inv));
  Var p = gc::exp(log_p);
  return gc::mean(gc::sum_rows(gc::mul(p, gc::sub(log_p, log_q))));
}

Var feature_preserving_loss(const ParamSet& fhat, const Var& color_ref_rows, const Var& generated_rows,
                            std::size_t batch, double temperature) {
  Var ref = gc::detach(classifier_features(fhat, color_ref_rows, batch));
  return softened_kl(ref, classifier_features(fhat, generated_rows, batch), temperature);
}

RasterImage normalize_image(const StyleModel& model, const RasterImage& img) {
  validate_raster(img, "input image");
  const RasterImage g = gray_normalize(img);
  Var out = colorize(model.colorizer, gc::constant(Tensor({g.pixels(), 1}, g.data)));
  RasterImage res(img.height, img.width, 3);
  const Tensor& v = out.value();
  for (std::size_t i = 0; i < v.size(); ++i) res.data[i] = std::clamp(v[i], 0.0, 1.0);
  return res;
}

// ------------------------------------------------------------- classifier

namespace {

Var cross_entropy(const Var& logits, const std::vector<int>& labels, std::size_t classes) {
  Tensor onehot({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return gc::neg(gc::mean(gc::sum_rows(gc::mul(gc::log_softmax_rows(logits), gc::constant(onehot))))) ;
}

}  // namespace

ParamSet train_tumor_classifier(const std::vector<TumorTile>& tiles, const ClassifierConfig& cfg) {
  if (tiles.empty()) throw ValidationError("no tumor classifier tiles");
  Rng rng(derive_seed(cfg.seed, 31));
  ParamSet fhat;
  gc::init_mlp(fhat, classifier_pixel_spec(), rng);
  gc::init_mlp(fhat, classifier_head_spec(), rng);
  gc::OptimState opt{cfg.lr, cfg.momentum, 0.0, {}};
  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      std::vector<const RasterImage*> imgs;
      std::vector<int> labels;
      for (std::size_t i = s; i < std::min(order.size(), s + cfg.batch); ++i) {
        imgs.push_back(&tiles[order[i]].image);
        labels.push_back(tiles[order[i]].label);
      }
      ImageBatch b = make_batch(imgs);
      Var loss = cross_entropy(classifier_logits(fhat, classifier_features(fhat, gc::constant(b.pixels), b.batch)),
                               labels, 2);
      fhat.zero_grad();
      gc::backward(loss);
      gc::sgd_momentum_step(fhat, opt);
    }
  }
  return fhat;
}

double tumor_classifier_accuracy(const ParamSet& fhat, const std::vector<TumorTile>& tiles) {
  std::size_t correct = 0;
  for (const auto& t : tiles) {
    ImageBatch b = make_batch({&t.image});
    const Tensor l = classifier_logits(fhat, classifier_features(fhat, gc::constant(b.pixels), 1)).value();
    correct += ((l[1] > l[0]) ? 1 : 0) == t.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(tiles.size());
}

// --------------------------------------------------------------- training

gc::Checkpoint style_checkpoint(const StyleModel& m, std::uint64_t seed) {
  gc::Checkpoint c;
  c.seed = seed;
  c.metadata = {{"kind", "style"},
                {"alpha", fmt(m.alpha, 17)},
                {"beta", fmt(m.beta, 17)},
                {"gamma", fmt(m.gamma, 17)},
                {"temperature", fmt(m.temperature, 17)}};
  for (const ParamSet* ps : {&m.colorizer, &m.discriminator, &m.classifier}) {
    for (auto& t : ps->snapshot()) c.tensors.push_back(std::move(t));
  }
  return c;
}

StyleModel style_from_checkpoint(const gc::Checkpoint& ckpt) {
  if (ckpt.metadata.count("kind") == 0 || ckpt.meta("kind") != "style") {
    throw ValidationError("checkpoint is not a style model");
  }
  StyleModel m;
  Rng rng(0);
  gc::init_mlp(m.colorizer, colorizer_spec(), rng);
  gc::init_mlp(m.discriminator, discriminator_spec(), rng);
  gc::init_mlp(m.classifier, classifier_pixel_spec(), rng);
  gc::init_mlp(m.classifier, classifier_head_spec(), rng);
  for (ParamSet* ps : {&m.colorizer, &m.discriminator, &m.classifier}) {
    std::vector<gc::NamedTensor> vals;
    for (const auto& name : ps->names()) vals.push_back({name, ckpt.tensor(name)});
    ps->load(vals);
  }
  m.alpha = std::stod(ckpt.meta("alpha"));
  m.beta = std::stod(ckpt.meta("beta"));
  m.gamma = std::stod(ckpt.meta("gamma"));
  m.temperature = std::stod(ckpt.meta("temperature"));
  return m;
}

StyleTrainResult train_style_transfer(const StyleDataset& data, const ParamSet& fhat, const StyleConfig& cfg,
                                      const std::function<void(const std::string&)>& log) {
  if (data.style_a.empty() || data.style_b.empty()) {
    throw ValidationError("style training needs both style-A and style-B images");
  }
  if (cfg.alpha < 0 || cfg.beta < 0 || cfg.gamma < 0) throw ValidationError("loss weights must be nonnegative");
  if (cfg.batch == 0) throw ValidationError("batch must be positive");
  const std::size_t h = data.style_a[0].height, w = data.style_a[0].width, hw = h * w;
  for (const auto* set : {&data.style_a, &data.style_b}) {
    for (const auto& img : *set) {
      validate_raster(img, "training image");
      if (img.height != h || img.width != w || img.channels != 3) {
        throw ValidationError("style training images must share one RGB size");
      }
    }
  }

  Rng rng(derive_seed(cfg.seed, 41));
  StyleTrainResult res;
  StyleModel& m = res.model;
  gc::init_mlp(m.colorizer, colorizer_spec(), rng);
  gc::init_mlp(m.discriminator, discriminator_spec(), rng);
  m.classifier = fhat.clone();
  m.alpha = cfg.alpha, m.beta = cfg.beta, m.gamma = cfg.gamma, m.temperature = cfg.temperature;
  gc::OptimState zopt{cfg.lr, cfg.momentum, cfg.clip_norm, {}}, dopt{cfg.d_lr, cfg.momentum, cfg.clip_norm, {}};

  auto gray_of = [](const std::vector<RasterImage>& imgs) {
    std::vector<RasterImage> out;
    for (const auto& i : imgs) out.push_back(gray_normalize(i));
    return out;
  };
  const auto gray_a = gray_of(data.style_a), gray_b = gray_of(data.style_b);
  const std::size_t bsz = std::min({cfg.batch, data.style_a.size(), data.style_b.size()});
  const std::size_t steps = std::max<std::size_t>(1, std::min(data.style_a.size(), data.style_b.size()) / bsz);

  res.curve.header = {"epoch", "l_gan", "l_recon", "l_fp", "total"};
  std::vector<std::size_t> order_a(data.style_a.size()), order_b(data.style_b.size());
  std::iota(order_a.begin(), order_a.end(), 0);
  std::iota(order_b.begin(), order_b.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const gc::Checkpoint stable = style_checkpoint(m, cfg.seed);
    shuffle(order_a, rng);
    shuffle(order_b, rng);
    double sum_gan = 0, sum_recon = 0, sum_fp = 0, sum_total = 0, sum_d = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const RasterImage*> real;
      std::vector<double> gray_rows;
      for (std::size_t i = 0; i < bsz; ++i) {
        const std::size_t ia = order_a[s * bsz + i];
        real.push_back(&data.style_a[ia]);
        gray_rows.insert(gray_rows.end(), gray_a[ia].data.begin(), gray_a[ia].data.end());
      }
      for (std::size_t i = 0; i < bsz; ++i) {
        const auto& g = gray_b[order_b[s * bsz + i]];
        gray_rows.insert(gray_rows.end(), g.data.begin(), g.data.end());
      }
      const ImageBatch rb = make_batch(real);
      Var real_rows = gc::constant(rb.pixels);
      Var gray_in = gc::constant(Tensor({2 * bsz * hw, 1}, std::move(gray_rows)));

      Var fake = colorize(m.colorizer, gray_in);
      {
        auto adv = adversarial_losses(discriminate(m.discriminator, real_rows, bsz, h, w),
                                      discriminate(m.discriminator, gc::detach(fake), 2 * bsz, h, w));
        sum_d += adv.d_loss.value().item();
        m.discriminator.zero_grad();
        gc::backward(adv.d_loss);
        gc::sgd_momentum_step(m.discriminator, dopt);
      }

      Var d_fake = discriminate(m.discriminator, fake, 2 * bsz, h, w);
      Var real_dummy = gc::constant(Tensor({1, 1}, 0.5));
      Var g_loss = adversarial_losses(real_dummy, d_fake).g_loss;
      Var gen_a = gc::slice_rows(fake, 0, bsz * hw);
      Var recon = recon_loss(rgb_to_gray_rows(real_rows, bsz), rgb_to_gray_rows(gen_a, bsz), h, w);
      Var fp = feature_preserving_loss(m.classifier, real_rows, gen_a, bsz, cfg.temperature);
      Var total = gc::add(gc::add(gc::scale(g_loss, cfg.alpha), gc::scale(recon, cfg.beta)), gc::scale(fp, cfg.gamma));
      const double tv = total.value().item();
      if (!std::isfinite(tv) || tv > cfg.divergence_threshold) {
        throw gc::DivergenceError("style training diverged at epoch " + std::to_string(epoch), stable);
      }
      m.colorizer.zero_grad();
      gc::backward(total);
      gc::sgd_momentum_step(m.colorizer, zopt);
      sum_gan += g_loss.value().item();
      sum_recon += recon.value().item();
      sum_fp += fp.value().item();
      sum_total += tv;
    }
    const double n = static_cast<double>(steps);
    res.curve.add_row({std::to_string(epoch), fmt(sum_gan / n), fmt(sum_recon / n), fmt(sum_fp / n),
                       fmt(sum_total / n)});
    if (log) {
      log("style epoch " + std::to_string(epoch) + " l_gan=" + fmt(sum_gan / n) + " l_recon=" + fmt(sum_recon / n) +
          " l_fp=" + fmt(sum_fp / n) + " total=" + fmt(sum_total / n) + " d_loss=" + fmt(sum_d / n));
    }
  }
  res.checkpoint = style_checkpoint(m, cfg.seed);
  return res;
}

// ------------------------------------------------------------ color metric

ClassLab class_mean_lab(const std::vector<RasterImage>& images, const std::vector<std::vector<std::uint8_t>>& masks) {
  if (images.size() != masks.size()) throw ValidationError("class_mean_lab: images and masks differ in count");
  std::array<std::array<double, 3>, 5> sum{};
  std::array<std::size_t, 5> count{};
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (masks[i].size() != images[i].pixels()) throw ValidationError("class_mean_lab: mask size mismatch");
    const RasterImage lab = rgb_to_lab(images[i]);
    for (std::size_t p = 0; p < lab.pixels(); ++p) {
      const std::size_t cls = masks[i][p];
      if (cls >= 5) throw ValidationError("class_mean_lab: mask class out of range");
      for (int k = 0; k < 3; ++k) sum[cls][k] += lab.data[3 * p + k];
      ++count[cls];
    }
  }
  ClassLab out;
  for (std::size_t c = 0; c < 5; ++c) {
    if (count[c] == 0) continue;
    std::array<double, 3> m{};
    for (int k = 0; k < 3; ++k) m[k] = sum[c][k] / static_cast<double>(count[c]);
    out[c] = m;
  }
  return out;
}

double class_color_distance(const ClassLab& a, const ClassLab& b) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    if (!a[c] || !b[c]) continue;
    double d = 0;
    for (int k = 0; k < 3; ++k) d += ((*a[c])[k] - (*b[c])[k]) * ((*a[c])[k] - (*b[c])[k]);
    total += std::sqrt(d);
    ++n;
  }
  if (n == 0) throw ValidationError("class_color_distance: no class present in both");
  return total / static_cast<double>(n);
}

}  // namespace histoprog::stainlab
