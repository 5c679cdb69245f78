#include "histoprog/meanteacher/meanteacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histoprog/common/error.hpp"
#include "histoprog/common/png_io.hpp"
#include "histoprog/gradcore/rng.hpp"
#include "json.hpp"

namespace histoprog::meanteacher {

namespace gc = histoprog::gradcore;
using gc::Activation;
using nlohmann::json;

namespace {

constexpr std::size_t kInputDim = kPatchSize * kPatchSize * 3;

void check_patch(const PatchSample& p) {
  if (p.pixels.height != kPatchSize || p.pixels.width != kPatchSize || p.pixels.channels != 3) {
    throw ValidationError("patch from " + p.slide_id + " is not 32x32 RGB");
  }
}

std::size_t argmax(const double* v, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(v, v + n) - v);
}

// Pixels enter the network rescaled from [0,1] to [-1,1].
Tensor input_rows(const std::vector<const RasterImage*>& imgs) {
  Tensor x({imgs.size(), kInputDim});
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    double* row = &x[i * kInputDim];
    for (std::size_t j = 0; j < kInputDim; ++j) row[j] = 2.0 * imgs[i]->data[j] - 1.0;
  }
  return x;
}

Tensor input_rows(const std::vector<PatchSample>& patches, std::size_t begin, std::size_t end) {
  std::vector<const RasterImage*> imgs;
  for (std::size_t i = begin; i < end; ++i) {
    check_patch(patches[i]);
    imgs.push_back(&patches[i].pixels);
  }
  return input_rows(imgs);
}

// Forward pass with input noise and dropout drawn from `rng`.
Var noisy_logits(const ParamSet& params, Tensor x, const MTConfig& cfg, Rng& rng) {
  if (cfg.input_noise > 0) {
    for (double& v : x.data()) v += normal(rng, 0.0, 2.0 * cfg.input_noise);
  }
  gc::LayerHook hook;
  if (cfg.dropout > 0) {
    hook = [&](std::size_t, const Var& a) {
      Tensor mask(a.shape());
      const double keep = 1.0 - cfg.dropout;
      for (double& m : mask.data()) m = uniform(rng) < keep ? 1.0 / keep : 0.0;
      return gc::mul(a, gc::constant(std::move(mask)));
    };
  }
  return gc::mlp_forward(params, gc::constant(std::move(x)), classifier_spec(), nullptr, hook);
}

Var soft_cross_entropy(const Var& logits, const Tensor& targets) {
  return gc::neg(gc::mean(gc::sum_rows(gc::mul(gc::log_softmax_rows(logits), gc::constant(targets)))));
}

Probs one_hot(int label) {
  Probs p{};
  p[static_cast<std::size_t>(label)] = 1.0;
  return p;
}

}  // namespace

// ---------------------------------------------------------------- patches

std::vector<PatchSample> extract_patches(const RasterImage& slide, const std::string& slide_id, std::size_t size,
                                         std::size_t stride) {
  if (size == 0 || stride == 0) throw ValidationError("patch size and stride must be positive");
  if (slide.height < size || slide.width < size) {
    throw ValidationError("slide " + slide_id + " is smaller than one " + std::to_string(size) + "x" +
                          std::to_string(size) + " patch");
  }
  const std::size_t rows = (slide.height - size) / stride + 1, cols = (slide.width - size) / stride + 1;
  std::vector<PatchSample> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.push_back({crop(slide, r * stride, c * stride, size, size), std::nullopt, slide_id, r, c});
    }
  }
  return out;
}

std::vector<PatchSample> extract_labeled_patches(const synthdata::Slide& slide, const std::string& slide_id,
                                                 std::size_t size, std::size_t stride) {
  auto patches = extract_patches(slide.image, slide_id, size, stride);
  for (auto& p : patches) {
    std::array<std::size_t, kNumClasses> count{};
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) ++count[slide.mask_at(p.row * stride + r, p.col * stride + c)];
    }
    p.label = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
  }
  return patches;
}

Augment augment_from_string(const std::string& name) {
  if (name == "identity") return Augment::identity;
  if (name == "rot90") return Augment::rot90;
  if (name == "hflip") return Augment::hflip;
  throw ValidationError("unknown augmentation '" + name + "' (expected identity, rot90 or hflip)");
}

PatchSample augment_patch(const PatchSample& p, Augment mode) {
  if (mode == Augment::identity) return p;
  const RasterImage& src = p.pixels;
  PatchSample out = p;
  if (mode == Augment::rot90) {
    out.pixels = RasterImage(src.width, src.height, src.channels);
    for (std::size_t r = 0; r < src.height; ++r) {
      for (std::size_t c = 0; c < src.width; ++c) {
        for (std::size_t k = 0; k < src.channels; ++k) out.pixels.at(src.width - 1 - c, r, k) = src.at(r, c, k);
      }
    }
  } else {
    for (std::size_t r = 0; r < src.height; ++r) {
      for (std::size_t c = 0; c < src.width; ++c) {
        for (std::size_t k = 0; k < src.channels; ++k) out.pixels.at(r, src.width - 1 - c, k) = src.at(r, c, k);
      }
    }
  }
  return out;
}

// ----------------------------------------------------------------- losses

Var consistency_loss(const Var& p_student, const Var& p_teacher) {
  if (p_student.shape() != p_teacher.shape()) {
    throw ValidationError("consistency_loss: shapes " + gc::shape_string(p_student.shape()) + " and " +
                          gc::shape_string(p_teacher.shape()) + " differ");
  }
  const double rows = static_cast<double>(p_student.value().rows());
  return gc::scale(gc::sum(gc::square(gc::sub(p_student, p_teacher))), 1.0 / rows);
}

std::vector<PseudoLabel> pseudo_label_select(const std::vector<Probs>& preds, std::size_t k, std::size_t p) {
  if (k == 0) throw ValidationError("pseudo-label K must be at least 1");
  if (p == 0 || p > kNumClasses) throw ValidationError("pseudo-label P must be in [1, 5]");
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < preds.size(); ++i) by_class[argmax(preds[i].data(), kNumClasses)].push_back(i);
  std::vector<PseudoLabel> out;
  for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
    auto& idx = by_class[cls];
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return preds[a][cls] > preds[b][cls]; });
    if (idx.size() > k) idx.resize(k);
    for (std::size_t i : idx) {
      PseudoLabel pl{i, static_cast<int>(cls), preds[i]};
      if (p < kNumClasses) {
        std::array<std::size_t, kNumClasses> order;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pl.probs[a] > pl.probs[b]; });
        for (std::size_t j = p; j < kNumClasses; ++j) pl.probs[order[j]] = 0.0;
        const double s = std::accumulate(pl.probs.begin(), pl.probs.end(), 0.0);
        for (double& v : pl.probs) v /= s;
      }
      out.push_back(pl);
    }
  }
  return out;
}

// ------------------------------------------------------------------ model

gc::MlpSpec classifier_spec() {
  return {"mt", {kInputDim, 128, 64, kNumClasses}, {Activation::relu, Activation::relu, Activation::identity}};
}

const std::vector<std::string>& layer_names() {
  static const std::vector<std::string> names{"fc1", "fc2", "logits", "probs"};
  return names;
}

double consistency_weight_at(const MTConfig& cfg, std::size_t epoch) {
  const double ramp = cfg.ramp_fraction * static_cast<double>(cfg.epochs);
  if (ramp <= 0) return cfg.consistency_weight;
  return cfg.consistency_weight * std::min(1.0, static_cast<double>(epoch - 1) / ramp);
}

Tensor predict(const ParamSet& params, const std::vector<PatchSample>& patches) {
  Tensor out({patches.size(), kNumClasses});
  constexpr std::size_t chunk = 256;
  for (std::size_t s = 0; s < patches.size(); s += chunk) {
    const std::size_t e = std::min(patches.size(), s + chunk);
    const Tensor p = gc::softmax_rows(gc::mlp_forward(params, gc::constant(input_rows(patches, s, e)), classifier_spec())).value();
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(s * kNumClasses));
  }
  return out;
}

double accuracy(const ParamSet& params, const std::vector<PatchSample>& patches) {
  if (patches.empty()) throw ValidationError("accuracy of an empty patch set");
  const Tensor p = predict(params, patches);
  std::size_t correct = 0, n = 0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (!patches[i].label) continue;
    ++n;
    correct += static_cast<int>(argmax(&p[i * kNumClasses], kNumClasses)) == *patches[i].label ? 1 : 0;
  }
  if (n == 0) throw ValidationError("accuracy needs labeled patches");
  return static_cast<double>(correct) / static_cast<double>(n);
}

gc::Checkpoint mt_checkpoint(const MTModel& m) {
  gc::Checkpoint c;
  c.seed = m.cfg.seed;
  c.metadata = {{"kind", "meanteacher"}, {"ema_delta", fmt(m.cfg.ema_delta, 17)}};
  c.tensors = m.student.snapshot();
  c.ema = gc::EmaSnapshot{m.cfg.ema_delta, m.teacher.snapshot()};
  return c;
}

MTModel mt_from_checkpoint(const gc::Checkpoint& ckpt) {
  if (ckpt.metadata.count("kind") == 0 || ckpt.meta("kind") != "meanteacher" || !ckpt.ema) {
    throw ValidationError("checkpoint is not a mean-teacher model");
  }
  MTModel m;
  Rng rng(0);
  gc::init_mlp(m.student, classifier_spec(), rng);
  m.student.load(ckpt.tensors);
  m.teacher = m.student.clone();
  m.teacher.load(ckpt.ema->teacher);
  m.cfg.seed = ckpt.seed;
  m.cfg.ema_delta = ckpt.ema->delta;
  return m;
}

// --------------------------------------------------------------- training

MTResult train_mean_teacher(const std::vector<PatchSample>& labeled, const std::vector<PatchSample>& unlabeled,
                            const MTConfig& cfg, const std::vector<PatchSample>& validation,
                            const std::function<void(const std::string&)>& log) {
  if (labeled.empty()) throw ValidationError("mean teacher needs at least one labeled patch");
  if (cfg.batch == 0) throw ValidationError("batch must be positive");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw ValidationError("dropout must be in [0, 1)");
  for (const auto& p : labeled) {
    check_patch(p);
    if (!p.label || *p.label < 0 || *p.label >= static_cast<int>(kNumClasses)) {
      throw ValidationError("labeled patch from " + p.slide_id + " has no valid class");
    }
  }
  for (const auto& p : unlabeled) check_patch(p);

  MTResult res;
  MTModel& m = res.model;
  m.cfg = cfg;
  Rng init_rng(derive_seed(cfg.seed, 51));
  gc::init_mlp(m.student, classifier_spec(), init_rng);
  m.teacher = m.student.clone();
  gc::EmaState ema = gc::make_ema(m.student, cfg.ema_delta);
  gc::OptimState opt{cfg.lr, cfg.momentum, 0.0, {}};
  Rng order_rng(derive_seed(cfg.seed, 52)), student_noise(derive_seed(cfg.seed, 53)),
      teacher_noise(derive_seed(cfg.seed, 54));

  std::vector<const RasterImage*> sup_images;
  std::vector<Probs> sup_targets;
  for (const auto& p : labeled) {
    sup_images.push_back(&p.pixels);
    sup_targets.push_back(one_hot(*p.label));
  }
  std::vector<const RasterImage*> pool;
  for (const auto& p : unlabeled) pool.push_back(&p.pixels);
  for (const auto& p : labeled) pool.push_back(&p.pixels);

  const auto& eval_set = validation.empty() ? labeled : validation;
  res.curve.header = {"epoch", "loss", "ce", "consistency", "weight", "student_acc", "teacher_acc"};

  // Each pass over the supervised list draws every class equally often.
  std::vector<std::size_t> sup_order;
  std::size_t sup_pos = 0;
  auto refill = [&]() {
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < sup_targets.size(); ++i) {
      by_class[argmax(sup_targets[i].data(), kNumClasses)].push_back(i);
    }
    sup_order.clear();
    std::size_t most = 0;
    for (const auto& c : by_class) most = std::max(most, c.size());
    for (auto& c : by_class) {
      if (c.empty()) continue;
      shuffle(c, order_rng);
      const std::size_t n = cfg.oversample ? most : c.size();
      for (std::size_t i = 0; i < n; ++i) sup_order.push_back(c[i % c.size()]);
    }
    shuffle(sup_order, order_rng);
    sup_pos = 0;
  };

  // `keep` is reserved by the caller, so pointers into it stay valid.
  auto pick_view = [&](const RasterImage* img, std::vector<RasterImage>& keep) -> const RasterImage* {
    if (!cfg.augment) return img;
    const std::size_t turns = uniform_index(order_rng, 4);
    const bool flip = uniform_index(order_rng, 2) == 1;
    if (turns == 0 && !flip) return img;
    PatchSample p{*img, std::nullopt, "", 0, 0};
    for (std::size_t t = 0; t < turns; ++t) p = augment_patch(p, Augment::rot90);
    if (flip) p = augment_patch(p, Augment::hflip);
    keep.push_back(std::move(p.pixels));
    return &keep.back();
  };

  std::size_t epoch_counter = 0;
  auto run_epochs = [&](std::size_t n_epochs) {
    refill();
    std::vector<std::size_t> pool_order(pool.size());
    std::iota(pool_order.begin(), pool_order.end(), 0);
    const std::size_t steps = (std::max(pool.size(), sup_order.size()) + cfg.batch - 1) / cfg.batch;
    for (std::size_t e = 1; e <= n_epochs; ++e) {
      ++epoch_counter;
      const gc::Checkpoint stable = mt_checkpoint(m);
      const double w = consistency_weight_at(cfg, std::min(e, cfg.epochs));
      shuffle(pool_order, order_rng);
      double sum_loss = 0, sum_ce = 0, sum_j = 0;
      std::size_t pool_pos = 0;
      for (std::size_t s = 0; s < steps; ++s) {
        std::vector<RasterImage> views;
        views.reserve(4 * cfg.batch);
        std::vector<const RasterImage*> rows, sources;
        Tensor targets({cfg.batch, kNumClasses});
        auto push = [&](const RasterImage* img) {
          sources.push_back(img);
          rows.push_back(pick_view(img, views));
        };
        for (std::size_t i = 0; i < cfg.batch; ++i) {
          if (sup_pos == sup_order.size()) refill();
          const std::size_t idx = sup_order[sup_pos++];
          push(sup_images[idx]);
          for (std::size_t k = 0; k < kNumClasses; ++k) targets.at(i, k) = sup_targets[idx][k];
        }
        if (w > 0) {
          for (std::size_t i = 0; i < cfg.batch && !pool.empty(); ++i) {
            if (pool_pos == pool_order.size()) pool_pos = 0;
            push(pool[pool_order[pool_pos++]]);
          }
        }
        const Tensor x = input_rows(rows);
        Var logits = noisy_logits(m.student, x, cfg, student_noise);
        Var ce = soft_cross_entropy(gc::slice_rows(logits, 0, cfg.batch), targets);
        Var loss = ce;
        double jv = 0;
        if (w > 0) {
          // The teacher sees its own augmented view of each patch.
          std::vector<const RasterImage*> teacher_rows;
          for (const RasterImage* img : sources) teacher_rows.push_back(pick_view(img, views));
          Var p_teacher =
              gc::detach(gc::softmax_rows(noisy_logits(m.teacher, input_rows(teacher_rows), cfg, teacher_noise)));
          Var j = consistency_loss(gc::softmax_rows(logits), p_teacher);
          jv = j.value().item();
          loss = gc::add(ce, gc::scale(j, w));
        }
        const double lv = loss.value().item();
        if (!std::isfinite(lv) || lv > cfg.divergence_threshold) {
          throw gc::DivergenceError("mean-teacher training diverged at epoch " + std::to_string(epoch_counter), stable);
        }
        m.student.zero_grad();
        gc::backward(loss);
        gc::sgd_momentum_step(m.student, opt);
        gc::ema_update(ema, m.student);
        for (std::size_t i = 0; i < ema.teacher.size(); ++i) m.teacher.vars()[i].mutable_value() = ema.teacher[i];
        sum_loss += lv;
        sum_ce += ce.value().item();
        sum_j += jv;
      }
      const double n = static_cast<double>(steps);
      const double sa = accuracy(m.student, eval_set), ta = accuracy(m.teacher, eval_set);
      res.curve.add_row({std::to_string(epoch_counter), fmt(sum_loss / n), fmt(sum_ce / n), fmt(sum_j / n), fmt(w),
                         fmt(sa), fmt(ta)});
      if (log) {
        log("mt epoch " + std::to_string(epoch_counter) + " loss=" + fmt(sum_loss / n) + " ce=" + fmt(sum_ce / n) +
            " consistency=" + fmt(sum_j / n) + " w=" + fmt(w) + " student_acc=" + fmt(sa) + " teacher_acc=" + fmt(ta));
      }
    }
  };

  run_epochs(cfg.epochs);
  for (std::size_t round = 0; round < cfg.pseudo_rounds && !unlabeled.empty(); ++round) {
    const Tensor p = predict(m.teacher, unlabeled);
    std::vector<Probs> preds(unlabeled.size());
    for (std::size_t i = 0; i < unlabeled.size(); ++i) {
      std::copy(&p[i * kNumClasses], &p[i * kNumClasses] + kNumClasses, preds[i].begin());
    }
    sup_images.resize(labeled.size());
    sup_targets.resize(labeled.size());
    for (const auto& pl : pseudo_label_select(preds, cfg.pseudo_k, cfg.pseudo_p)) {
      sup_images.push_back(&unlabeled[pl.index].pixels);
      sup_targets.push_back(pl.probs);
    }
    if (log) log("pseudo-label round " + std::to_string(round + 1) + ": " +
                 std::to_string(sup_images.size() - labeled.size()) + " patches added");
    run_epochs(cfg.epochs);
  }
  res.checkpoint = mt_checkpoint(m);
  return res;
}

// -------------------------------------------------------------- inference

ClassificationMap classification_map(const MTModel& model, const RasterImage& slide) {
  validate_raster(slide, "slide");
  if (slide.channels != 3) throw ValidationError("classification_map needs an RGB slide");
  const auto patches = extract_patches(slide, "slide");
  ClassificationMap map;
  map.rows = slide.height / kPatchSize;
  map.cols = slide.width / kPatchSize;
  const Tensor p = predict(model.teacher, patches);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    Probs pr;
    std::copy(&p[i * kNumClasses], &p[i * kNumClasses] + kNumClasses, pr.begin());
    map.probs.push_back(pr);
    map.classes.push_back(static_cast<std::uint8_t>(argmax(pr.data(), kNumClasses)));
  }
  return map;
}

const std::vector<Rgb8>& map_palette() {
  static const std::vector<Rgb8> palette{
      {0, 170, 0}, {255, 220, 0}, {220, 0, 0}, {0, 0, 0}, {255, 255, 255}};
  return palette;
}

namespace {

std::filesystem::path sidecar_path(std::filesystem::path png) { return png.replace_extension(".json"); }

}  // namespace

void save_map(const ClassificationMap& map, const std::filesystem::path& png_path) {
  write_indexed_png(png_path, map.cols, map.rows, map.classes, map_palette());
  json probs = json::array();
  for (const auto& p : map.probs) probs.push_back(std::vector<double>(p.begin(), p.end()));
  json classes = json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) classes.push_back(synthdata::class_name(c));
  const json doc{{"rows", map.rows}, {"cols", map.cols}, {"classes", classes}, {"probs", probs}};
  write_text_file(sidecar_path(png_path), doc.dump() + "\n");
}

ClassificationMap load_map(const std::filesystem::path& png_path) {
  ClassificationMap map;
  std::vector<Rgb8> palette;
  map.classes = read_indexed_png(png_path, map.cols, map.rows, palette);
  try {
    const json doc = json::parse(read_text_file(sidecar_path(png_path)));
    for (const auto& row : doc.at("probs")) {
      Probs p{};
      for (std::size_t k = 0; k < kNumClasses; ++k) p[k] = row.at(k).get<double>();
      map.probs.push_back(p);
    }
  } catch (const json::exception& e) {
    throw ValidationError("bad classification map sidecar: " + std::string(e.what()));
  }
  if (map.probs.size() != map.classes.size()) throw ValidationError("map sidecar does not match the PNG grid");
  return map;
}

Tensor extract_features(const MTModel& model, const std::vector<PatchSample>& patches, const std::string& layer) {
  const auto& names = layer_names();
  const auto it = std::find(names.begin(), names.end(), layer);
  if (it == names.end()) {
    std::string all;
    for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
    throw ValidationError("unknown layer '" + layer + "'; layers: " + all);
  }
  if (patches.empty()) return Tensor({0, 0});
  std::vector<Var> acts;
  const Var logits = gc::mlp_forward(model.teacher, gc::constant(input_rows(patches, 0, patches.size())),
                                     classifier_spec(), &acts);
  if (layer == "probs") return gc::softmax_rows(logits).value();
  return acts[static_cast<std::size_t>(it - names.begin())].value();
}

std::vector<double> extract_features(const MTModel& model, const PatchSample& patch, const std::string& layer) {
  const Tensor f = extract_features(model, std::vector<PatchSample>{patch}, layer);
  return {f.data().begin(), f.data().end()};
}

CsvTable patch_manifest(const std::vector<PatchSample>& patches) {
  CsvTable t;
  t.header = {"slide_id", "row", "col", "label"};
  for (const auto& p : patches) {
    t.add_row({p.slide_id, std::to_string(p.row), std::to_string(p.col),
               p.label ? synthdata::class_name(static_cast<std::size_t>(*p.label)) : ""});
  }
  return t;
}

}  // namespace histoprog::meanteacher
