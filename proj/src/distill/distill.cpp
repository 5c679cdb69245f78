#include "histoprog/distill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/mlp.hpp"
#include "histoprog/gradcore/optim.hpp"

namespace histoprog::distill {

namespace gc = histoprog::gradcore;

namespace {

Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  const Tensor& x = a.value();
  const std::size_t d = x.cols();
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = x.at(idx[r], c);
  }
  return gc::make_op(
      std::move(out), {a},
      [idx = std::move(idx), d](gc::Node& self) {
        Tensor& g = self.parents[0].node()->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t c = 0; c < d; ++c) g[idx[r] * d + c] += self.grad[r * d + c];
        }
      },
      "gather_rows");
}

std::string block(std::size_t b, const char* what) { return "vit.b" + std::to_string(b) + "." + what; }

gc::MlpSpec block_mlp(const TinyVitConfig& cfg, std::size_t b) {
  return {block(b, "mlp"), {cfg.dim, cfg.mlp_hidden, cfg.dim}, {gc::Activation::relu, gc::Activation::identity}};
}

gc::MlpSpec head_spec(const TinyVitConfig& cfg) {
  return {"vit.head", {cfg.dim, cfg.outputs}, {gc::Activation::identity}};
}

// ln sigmoid(z) for a {n,1} column, via a two-way log-softmax.
Var log_sigmoid(const Var& z) {
  const Var parts[] = {gc::constant(Tensor({z.value().rows(), 1}, 0.0)), z};
  return gc::slice_cols(gc::log_softmax_rows(gc::concat_cols(parts)), 1, 2);
}

Tensor rows_of(const Tensor& t, const std::vector<std::size_t>& idx) {
  Tensor out({idx.size(), t.cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * t.cols()), t.cols(),
                out.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()));
  }
  return out;
}

std::size_t argmax_row(const Tensor& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c) {
    if (t.at(r, c) > t.at(r, best)) best = c;
  }
  return best;
}

}  // namespace

// ---------------------------------------------------------------- TinyViT

TinyVit init_tiny_vit(const TinyVitConfig& cfg, std::uint64_t seed) {
  if (cfg.dim == 0 || cfg.blocks == 0 || cfg.mlp_hidden == 0 || cfg.outputs == 0) {
    throw ValidationError("TinyViT sizes must be positive");
  }
  TinyVit m;
  m.cfg = cfg;
  Rng rng(seed);
  m.params.add("vit.embed.weight", gc::glorot_uniform(kTokenDim, cfg.dim, rng));
  m.params.add("vit.embed.bias", Tensor({cfg.dim}, 0.0));
  Tensor cls({1, cfg.dim});
  for (double& v : cls.data()) v = normal(rng, 0.0, 0.02);
  m.params.add("vit.cls", cls);
  if (cfg.positional) {
    Tensor pos({kTokens + 1, cfg.dim});
    for (double& v : pos.data()) v = normal(rng, 0.0, 0.02);
    m.params.add("vit.pos", pos);
  }
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    for (const char* w : {"q", "k", "v", "o"}) m.params.add(block(b, w), gc::glorot_uniform(cfg.dim, cfg.dim, rng));
    gc::init_mlp(m.params, block_mlp(cfg, b), rng);
  }
  gc::init_mlp(m.params, head_spec(cfg), rng);
  return m;
}

Tensor tokenize(const std::vector<RasterImage>& images) {
  Tensor out({images.size() * kTokens, kTokenDim});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RasterImage& img = images[n];
    if (img.height != kInputSize || img.width != kInputSize || img.channels != 3) {
      throw ValidationError("TinyViT expects 32x32x3 input, got " + std::to_string(img.height) + "x" +
                            std::to_string(img.width) + "x" + std::to_string(img.channels));
    }
    for (std::size_t t = 0; t < kTokens; ++t) {
      const std::size_t r0 = (t / 4) * kTokenSize, c0 = (t % 4) * kTokenSize;
      double* row = &out.at(n * kTokens + t, 0);
      for (std::size_t r = 0; r < kTokenSize; ++r) {
        for (std::size_t c = 0; c < kTokenSize; ++c) {
          for (std::size_t ch = 0; ch < 3; ++ch) *row++ = 2.0 * img.at(r0 + r, c0 + c, ch) - 1.0;
        }
      }
    }
  }
  return out;
}

VitOutput tiny_vit_forward_tokens(const TinyVit& model, const Tensor& tokens) {
  const auto& cfg = model.cfg;
  if (tokens.rank() != 2 || tokens.cols() != kTokenDim || tokens.rows() % kTokens != 0 || tokens.rows() == 0) {
    throw ValidationError("TinyViT expects token rows {n*16, 192}, got " + gc::shape_string(tokens.shape()));
  }
  const std::size_t n = tokens.rows() / kTokens, seq = kTokens + 1, d = cfg.dim;
  const auto& p = model.params;
  Var emb = gc::add(gc::matmul(gc::constant(tokens), p.at("vit.embed.weight")), p.at("vit.embed.bias"));
  Var cls = gc::matmul(gc::constant(Tensor({n, 1}, 1.0)), p.at("vit.cls"));
  const Var parts[] = {cls, emb};
  std::vector<std::size_t> order(n * seq);
  for (std::size_t b = 0; b < n; ++b) {
    order[b * seq] = b;
    for (std::size_t t = 0; t < kTokens; ++t) order[b * seq + 1 + t] = n + b * kTokens + t;
  }
  Var x = gather_rows(gc::concat_rows(parts), std::move(order));
  if (cfg.positional) {
    x = gc::reshape(gc::add(gc::reshape(x, {n, seq * d}), gc::reshape(p.at("vit.pos"), {seq * d})), {n * seq, d});
  }
  VitOutput out;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    Var q = gc::reshape(gc::matmul(x, p.at(block(b, "q"))), {n, seq, d});
    Var k = gc::reshape(gc::matmul(x, p.at(block(b, "k"))), {n, seq, d});
    Var v = gc::reshape(gc::matmul(x, p.at(block(b, "v"))), {n, seq, d});
    Var a = gc::softmax_rows(gc::scale(gc::bmm_nt(q, k), scale));
    out.attention.push_back(a);
    x = gc::add(x, gc::matmul(gc::reshape(gc::bmm(a, v), {n * seq, d}), p.at(block(b, "o"))));
    x = gc::add(x, gc::mlp_forward(p, x, block_mlp(cfg, b)));
  }
  std::vector<std::size_t> heads(n);
  for (std::size_t b = 0; b < n; ++b) heads[b] = b * seq;
  out.features = gather_rows(x, std::move(heads));
  out.logits = gc::mlp_forward(p, out.features, head_spec(cfg));
  return out;
}

VitOutput tiny_vit_forward(const TinyVit& model, const std::vector<RasterImage>& images) {
  return tiny_vit_forward_tokens(model, tokenize(images));
}

Tensor student_probs(const TinyVit& model, const std::vector<RasterImage>& images) {
  Tensor out({images.size(), model.cfg.outputs});
  constexpr std::size_t chunk = 256;
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    const std::vector<RasterImage> part(images.begin() + static_cast<std::ptrdiff_t>(s),
                                        images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), s + chunk)));
    const Tensor p = gc::softmax_rows(tiny_vit_forward(model, part).logits).value();
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(s * model.cfg.outputs));
  }
  return out;
}

gc::Checkpoint vit_checkpoint(const TinyVit& m) {
  gc::Checkpoint c;
  c.metadata = {{"kind", "tinyvit"},
                {"positional", m.cfg.positional ? "1" : "0"},
                {"dim", std::to_string(m.cfg.dim)},
                {"blocks", std::to_string(m.cfg.blocks)},
                {"mlp_hidden", std::to_string(m.cfg.mlp_hidden)},
                {"outputs", std::to_string(m.cfg.outputs)}};
  c.tensors = m.params.snapshot();
  return c;
}

TinyVit vit_from_checkpoint(const gc::Checkpoint& ckpt) {
  if (ckpt.metadata.count("kind") == 0 || ckpt.meta("kind") != "tinyvit") {
    throw ValidationError("checkpoint is not a TinyViT student");
  }
  TinyVitConfig cfg;
  cfg.positional = ckpt.meta("positional") == "1";
  cfg.dim = std::stoul(ckpt.meta("dim"));
  cfg.blocks = std::stoul(ckpt.meta("blocks"));
  cfg.mlp_hidden = std::stoul(ckpt.meta("mlp_hidden"));
  cfg.outputs = std::stoul(ckpt.meta("outputs"));
  TinyVit m = init_tiny_vit(cfg, ckpt.seed);
  m.params.load(ckpt.tensors);
  return m;
}

// ------------------------------------------------------------------ losses

gc::MlpSpec discriminator_spec(std::size_t outputs) {
  return {"disc", {outputs, 16, 1}, {gc::Activation::relu, gc::Activation::identity}};
}

KdLoss kd_gan_loss(const Var& student_logits, const Tensor& teacher_logits, const std::vector<int>& labels,
                   const ParamSet& disc, const KDConfig& cfg) {
  const Tensor& s = student_logits.value();
  const std::size_t n = s.rows(), k = s.cols();
  if (s.rank() != 2 || teacher_logits.shape() != s.shape()) {
    throw ValidationError("kd loss: student " + gc::shape_string(s.shape()) + " vs teacher " +
                          gc::shape_string(teacher_logits.shape()));
  }
  if (labels.size() != n) throw ValidationError("kd loss: one label per row required");
  if (!teacher_logits.all_finite()) throw ValidationError("non-finite teacher outputs");
  if (cfg.alpha1 < 0 || cfg.alpha2 < 0 || !(cfg.kd_temperature > 0)) throw ValidationError("invalid KD weights");

  KdLoss out;
  Tensor onehot({n, k}, 0.0);
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    if (static_cast<std::size_t>(labels[i]) >= k) throw ValidationError("kd loss: label out of range");
    onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    ++labeled;
  }
  out.ce = labeled == 0 ? gc::constant(Tensor::scalar(0.0))
                        : gc::scale(gc::sum(gc::mul(gc::log_softmax_rows(student_logits), gc::constant(onehot))),
                                    -1.0 / static_cast<double>(labeled));

  const double t = cfg.kd_temperature;
  const Var soft_t = gc::scale(gc::constant(teacher_logits), 1.0 / t);
  const Tensor pt = gc::softmax_rows(soft_t).value(), lpt = gc::log_softmax_rows(soft_t).value();
  double entropy_term = 0;
  for (std::size_t i = 0; i < pt.size(); ++i) entropy_term += pt[i] * lpt[i];
  Var cross = gc::sum(gc::mul(gc::log_softmax_rows(gc::scale(student_logits, 1.0 / t)), gc::constant(pt)));
  out.kl = gc::scale(gc::sub(gc::constant(Tensor::scalar(entropy_term)), cross), t * t / static_cast<double>(n));

  Var z = gc::mlp_forward(disc, gc::softmax_rows(student_logits), discriminator_spec(k));
  out.gan = gc::scale(gc::sum(log_sigmoid(z)), -1.0 / static_cast<double>(n));

  out.total = out.ce;
  if (cfg.alpha1 != 0) out.total = gc::add(out.total, gc::scale(out.kl, cfg.alpha1));
  if (cfg.alpha2 != 0) out.total = gc::add(out.total, gc::scale(out.gan, cfg.alpha2));
  return out;
}

Var discriminator_loss(const ParamSet& disc, const Var& student_probs, const Var& teacher_probs) {
  const std::size_t k = student_probs.value().cols();
  Var zt = gc::mlp_forward(disc, teacher_probs, discriminator_spec(k));
  Var zs = gc::mlp_forward(disc, student_probs, discriminator_spec(k));
  Var real = gc::scale(gc::sum(log_sigmoid(zt)), -1.0 / static_cast<double>(zt.value().rows()));
  Var fake = gc::scale(gc::sum(log_sigmoid(gc::neg(zs))), -1.0 / static_cast<double>(zs.value().rows()));
  return gc::add(real, fake);
}

Var crd_loss(const Var& student, const Var& anchors, const Var& negatives, double tau) {
  const Tensor& s = student.value();
  const std::size_t b = s.rows(), d = s.cols();
  if (!(tau > 0)) throw ValidationError("CRD temperature must be positive");
  if (s.rank() != 2 || anchors.value().shape() != s.shape()) throw ValidationError("crd: anchors must match student shape");
  const Tensor& ng = negatives.value();
  if (ng.rank() != 3 || ng.shape()[0] != b || ng.shape()[2] != d || ng.shape()[1] == 0) {
    throw ValidationError("crd: negatives must be {B, N>=1, d}, got " + gc::shape_string(ng.shape()));
  }
  const std::size_t nn = ng.shape()[1];
  for (const Tensor* t : {&s, &anchors.value(), &ng}) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      double sq = 0;
      for (std::size_t c = 0; c < d; ++c) sq += t->at(r, c) * t->at(r, c);
      if (!(sq > 1e-24)) throw ValidationError("crd: zero-norm feature");
    }
  }
  Var sn = gc::l2_normalize_rows(student);
  Var an = gc::l2_normalize_rows(anchors);
  Var nn_rows = gc::reshape(gc::l2_normalize_rows(gc::reshape(negatives, {b * nn, d})), {b, nn, d});
  Var pos = gc::sum_rows(gc::mul(sn, an));
  Var neg = gc::reshape(gc::bmm_nt(gc::reshape(sn, {b, 1, d}), nn_rows), {b, nn});
  const Var parts[] = {pos, neg};
  Var logp = gc::log_softmax_rows(gc::scale(gc::concat_cols(parts), 1.0 / tau));
  return gc::scale(gc::sum(gc::slice_cols(logp, 0, 1)), -1.0 / static_cast<double>(b));
}

// ---------------------------------------------------------------- teacher

TeacherOutputs mt_teacher_outputs(const meanteacher::MTModel& teacher, const std::vector<RasterImage>& images) {
  TeacherOutputs out;
  constexpr std::size_t chunk = 256;
  std::vector<Tensor> logits, feats;
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    std::vector<meanteacher::PatchSample> part;
    for (std::size_t i = s; i < std::min(images.size(), s + chunk); ++i) part.push_back({images[i], {}, "", 0, 0});
    logits.push_back(meanteacher::extract_features(teacher, part, "logits"));
    feats.push_back(meanteacher::extract_features(teacher, part, "fc2"));
  }
  auto stack = [&](const std::vector<Tensor>& parts) {
    const std::size_t cols = parts.empty() ? 0 : parts.front().cols();
    Tensor t({images.size(), cols});
    std::size_t r = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), t.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
      r += p.rows();
    }
    return t;
  };
  out.logits = stack(logits);
  out.features = stack(feats);
  return out;
}

// --------------------------------------------------------------- training

namespace {

struct Batches {
  std::vector<std::vector<std::size_t>> list;
};

Batches epoch_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  Batches b;
  for (std::size_t s = 0; s < n; s += batch) {
    b.list.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                        order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch)));
  }
  return b;
}

std::vector<RasterImage> pick(const std::vector<RasterImage>& images, const std::vector<std::size_t>& idx) {
  std::vector<RasterImage> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(images[i]);
  return out;
}

std::vector<int> pick(const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

void check_inputs(const std::vector<RasterImage>& images, const std::vector<int>& labels, const DistillConfig& cfg) {
  if (images.empty()) throw ValidationError("distillation needs at least one image");
  if (labels.size() != images.size()) throw ValidationError("one label (or -1) per image required");
  if (cfg.batch == 0 || cfg.epochs == 0) throw ValidationError("batch and epochs must be positive");
}

double labeled_accuracy(const Tensor& probs, const std::vector<int>& labels) {
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    ++n;
    if (static_cast<int>(argmax_row(probs, i)) == labels[i]) ++hit;
  }
  return n == 0 ? std::nan("") : static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace

DistillResult train_distilled(const std::vector<RasterImage>& images, const std::vector<int>& labels,
                              const TeacherOutputs& teacher, const DistillConfig& cfg,
                              const std::function<void(const std::string&)>& log) {
  check_inputs(images, labels, cfg);
  if (teacher.logits.rows() != images.size() || teacher.logits.cols() != cfg.vit.outputs) {
    throw ValidationError("teacher outputs " + gc::shape_string(teacher.logits.shape()) + " do not match " +
                          std::to_string(images.size()) + " images x " + std::to_string(cfg.vit.outputs) + " outputs");
  }
  if (!teacher.logits.all_finite()) throw ValidationError("non-finite teacher outputs");
  const bool use_crd = cfg.kd.lambda > 0;
  if (use_crd && teacher.features.rows() != images.size()) throw ValidationError("teacher features missing");

  DistillResult res;
  res.student = init_tiny_vit(cfg.vit, derive_seed(cfg.seed, 71));
  ParamSet trainable = res.student.params;
  if (use_crd) {
    Rng prng(derive_seed(cfg.seed, 72));
    trainable.add("crd.proj.weight", gc::glorot_uniform(cfg.vit.dim, teacher.features.cols(), prng));
  }
  Rng drng(derive_seed(cfg.seed, 73));
  gc::init_mlp(res.disc, discriminator_spec(cfg.vit.outputs), drng);
  Rng order_rng(derive_seed(cfg.seed, 74));
  gc::OptimState opt{cfg.lr, cfg.momentum, cfg.clip_norm, {}}, dopt{cfg.d_lr, cfg.momentum, cfg.clip_norm, {}};
  const Tensor teacher_probs = gc::softmax_rows(gc::constant(teacher.logits)).value();

  res.curve.header = {"epoch", "loss", "ce", "kl", "gan", "crd", "accuracy", "agreement"};
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    gc::Checkpoint stable = vit_checkpoint(res.student);
    stable.seed = cfg.seed;
    double sums[5] = {0, 0, 0, 0, 0};
    const auto batches = epoch_batches(images.size(), cfg.batch, order_rng);
    for (const auto& idx : batches.list) {
      const std::size_t b = idx.size();
      const VitOutput out = tiny_vit_forward(res.student, pick(images, idx));
      const KdLoss kd = kd_gan_loss(out.logits, rows_of(teacher.logits, idx), pick(labels, idx), res.disc, cfg.kd);
      Var loss = kd.total;
      double crd_value = 0;
      if (use_crd && b >= 2) {
        const std::size_t nn = cfg.kd.negatives == 0 ? b - 1 : std::min(cfg.kd.negatives, b - 1);
        const Tensor anchors = rows_of(teacher.features, idx);
        const std::size_t dt = anchors.cols();
        Tensor neg({b, nn, dt});
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < nn; ++j) {
            const std::size_t other = (i + 1 + j) % b;
            std::copy_n(&anchors.at(other, 0), dt, &neg[(i * nn + j) * dt]);
          }
        }
        Var c = crd_loss(gc::matmul(out.features, trainable.at("crd.proj.weight")), gc::constant(anchors),
                         gc::constant(neg), cfg.kd.tau);
        crd_value = c.value()[0];
        loss = gc::add(loss, gc::scale(c, cfg.kd.lambda));
      }
      const double lv = loss.value()[0];
      if (!std::isfinite(lv) || std::abs(lv) > cfg.divergence_threshold) {
        stable.metadata["epoch"] = std::to_string(e - 1);
        throw gc::DivergenceError("distillation diverged at epoch " + std::to_string(e), stable);
      }
      trainable.zero_grad();
      gc::backward(loss);
      gc::sgd_momentum_step(trainable, opt);
      if (cfg.kd.alpha2 > 0) {
        res.disc.zero_grad();
        Var dl = discriminator_loss(res.disc, gc::constant(gc::softmax_rows(out.logits).value()),
                                    gc::constant(rows_of(teacher_probs, idx)));
        gc::backward(dl);
        gc::sgd_momentum_step(res.disc, dopt);
      }
      const double w = static_cast<double>(b);
      sums[0] += w * lv;
      sums[1] += w * kd.ce.value()[0];
      sums[2] += w * kd.kl.value()[0];
      sums[3] += w * kd.gan.value()[0];
      sums[4] += w * crd_value;
    }
    const Tensor probs = student_probs(res.student, images);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < images.size(); ++i) agree += argmax_row(probs, i) == argmax_row(teacher_probs, i);
    const double n = static_cast<double>(images.size());
    std::vector<std::string> row{std::to_string(e)};
    for (double s : sums) row.push_back(fmt(s / n));
    row.push_back(fmt(labeled_accuracy(probs, labels)));
    row.push_back(fmt(static_cast<double>(agree) / n));
    res.curve.add_row(row);
    if (log) log("epoch " + std::to_string(e) + " loss " + row[1] + " acc " + row[6] + " agree " + row[7]);
  }
  res.checkpoint = vit_checkpoint(res.student);
  res.checkpoint.seed = cfg.seed;
  return res;
}

DistillResult train_supervised_student(const std::vector<RasterImage>& images, const std::vector<int>& labels,
                                       const DistillConfig& cfg) {
  check_inputs(images, labels, cfg);
  DistillResult res;
  res.student = init_tiny_vit(cfg.vit, derive_seed(cfg.seed, 71));
  Rng order_rng(derive_seed(cfg.seed, 74));
  gc::OptimState opt{cfg.lr, cfg.momentum, cfg.clip_norm, {}};
  res.curve.header = {"epoch", "loss", "accuracy"};
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    double sum = 0;
    for (const auto& idx : epoch_batches(images.size(), cfg.batch, order_rng).list) {
      const auto lab = pick(labels, idx);
      Tensor onehot({idx.size(), cfg.vit.outputs}, 0.0);
      std::size_t labeled = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (lab[i] >= 0) onehot.at(i, static_cast<std::size_t>(lab[i])) = 1.0, ++labeled;
      }
      if (labeled == 0) continue;
      Var logits = tiny_vit_forward(res.student, pick(images, idx)).logits;
      Var loss = gc::scale(gc::sum(gc::mul(gc::log_softmax_rows(logits), gc::constant(onehot))),
                           -1.0 / static_cast<double>(labeled));
      res.student.params.zero_grad();
      gc::backward(loss);
      gc::sgd_momentum_step(res.student.params, opt);
      sum += static_cast<double>(idx.size()) * loss.value()[0];
    }
    res.curve.add_row({std::to_string(e), fmt(sum / static_cast<double>(images.size())),
                       fmt(labeled_accuracy(student_probs(res.student, images), labels))});
  }
  res.checkpoint = vit_checkpoint(res.student);
  res.checkpoint.seed = cfg.seed;
  return res;
}

// ----------------------------------------------------------- cohort glue

RasterImage render_class_patch(std::size_t cls, std::uint64_t seed) {
  if (cls >= synthdata::kNumClasses) throw ValidationError("tissue class out of range");
  synthdata::SlideSpec sp;
  sp.seed = seed;
  sp.height = sp.width = kInputSize;
  sp.composition.assign(synthdata::kNumClasses, 0.0);
  sp.composition[cls] = 1.0;
  sp.regions = 4;
  return synthdata::gen_slide(sp).image;
}

std::vector<RasterImage> render_cohort_patches(const synthdata::Cohort& cohort, std::uint64_t seed) {
  std::vector<std::size_t> classes;
  for (const auto& p : cohort.patients) {
    for (const auto& l : p.lesions) classes.insert(classes.end(), l.patch_classes.begin(), l.patch_classes.end());
  }
  std::vector<RasterImage> out(classes.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(classes.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = render_class_patch(classes[k], derive_seed(seed, k));
  }
  return out;
}

std::vector<prognosis::PatientSample> patients_with_features(const synthdata::Cohort& cohort, const Tensor& features) {
  auto patients = prognosis::patients_from_cohort(cohort);
  std::size_t row = 0;
  const std::size_t d = features.cols();
  for (auto& p : patients) {
    for (auto& les : p.lesions) {
      const std::size_t n = les.rows();
      if (row + n > features.rows()) throw ValidationError("fewer feature rows than cohort patches");
      Tensor t({n, d});
      std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(row * d), n * d, t.data().begin());
      les = std::move(t);
      row += n;
    }
  }
  if (row != features.rows()) throw ValidationError("more feature rows than cohort patches");
  return patients;
}

CsvTable comparison_csv(const std::vector<ComparisonRow>& rows) {
  CsvTable t;
  t.header = {"model", "aggregation_strategy", "endpoint", "c_index", "ci_low", "ci_high"};
  for (const auto& r : rows) {
    t.add_row({r.model, r.aggregation, r.endpoint, fmt(r.c_index.estimate, 4), fmt(r.c_index.low, 4),
               fmt(r.c_index.high, 4)});
  }
  return t;
}

}  // namespace histoprog::distill
