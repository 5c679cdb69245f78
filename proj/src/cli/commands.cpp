#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "histoprog/cli/cli.hpp"
#include "histoprog/common/error.hpp"
#include "histoprog/common/svg.hpp"
#include "histoprog/stainlab/color.hpp"
#include "histoprog/stainlab/metrics.hpp"

namespace histoprog::cli {

namespace fs = std::filesystem;
namespace gc = histoprog::gradcore;
namespace mt = histoprog::meanteacher;
namespace pg = histoprog::prognosis;
namespace sd = histoprog::synthdata;
namespace sl = histoprog::stainlab;

namespace {

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw ValidationError("missing input file: " + p.string());
}

// Exclusive ownership of a run directory for the lifetime of one command.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw RuntimeFailure("run directory is locked by another process: " + path_.string());
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

struct Options {
  std::string run_dir;
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<long long> seed;
  // command specific
  std::string method, input, output, reference, head, sections;
};

struct Context {
  fs::path dir;
  KeyValueConfig cfg;
  std::ostream& out;
  std::ofstream log_file;

  Context(fs::path d, KeyValueConfig c, std::ostream& o) : dir(std::move(d)), cfg(std::move(c)), out(o) {
    log_file.open(dir / "log.txt", std::ios::app);
    if (!log_file) throw RuntimeFailure("cannot open " + (dir / "log.txt").string());
  }
  void log(const std::string& line) { log_file << line << '\n' << std::flush; }
  LogFn logger(const std::string& stage) {
    return [this, stage](const std::string& s) { log(stage + ": " + s); };
  }
  fs::path path(const std::string& rel) const { return dir / rel; }
  fs::path output(const std::string& rel) const {
    const fs::path p = dir / rel;
    fs::create_directories(p.parent_path());
    return p;
  }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(cfg.get_int("seed")); }
};

KeyValueConfig resolve_config(const fs::path& dir, const Options& o) {
  KeyValueConfig cfg = default_run_config();
  if (!dir.empty() && fs::is_regular_file(dir / "config.resolved")) cfg.load_file(dir / "config.resolved");
  if (!o.config_file.empty()) {
    require_file(o.config_file);
    cfg.load_file(o.config_file);
  }
  for (const auto& s : o.sets) cfg.set_assignment(s);
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  return cfg;
}

// ------------------------------------------------------------------ slides

struct SlideEntry {
  std::string id;
  std::size_t index = 0;
  bool test = false;
};

std::string slide_id(std::size_t i) {
  const std::string n = std::to_string(i);
  return "slide_" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

std::vector<SlideEntry> slide_table(const Context& ctx) {
  const fs::path p = ctx.path("data/slides.csv");
  require_file(p);
  const CsvTable t = read_csv(p);
  std::vector<SlideEntry> out;
  for (const auto& row : t.rows) {
    out.push_back({row[t.column("slide_id")], std::stoul(row[t.column("index")]), row[t.column("split")] == "test"});
  }
  return out;
}

RasterImage load_slide_image(const Context& ctx, const std::string& id, sd::StainStyle style) {
  const fs::path p = ctx.path("data/slides/" + id + "_" + sd::to_string(style) + ".png");
  require_file(p);
  return load_raster(p);
}

sd::Slide load_slide(const Context& ctx, const std::string& id, sd::StainStyle style) {
  sd::Slide s;
  s.image = load_slide_image(ctx, id, style);
  const fs::path mp = ctx.path("data/slides/" + id + "_mask.png");
  require_file(mp);
  std::size_t w = 0, h = 0;
  std::vector<Rgb8> palette;
  s.mask = read_indexed_png(mp, w, h, palette);
  if (w != s.image.width || h != s.image.height) throw ValidationError("mask size does not match " + id);
  return s;
}

// Training slides of one style stacked vertically.
RasterImage reference_image(const Context& ctx) {
  RasterImage out;
  for (const auto& e : slide_table(ctx)) {
    if (e.test) continue;
    const RasterImage img = load_slide_image(ctx, e.id, sd::StainStyle::A);
    if (out.data.empty()) {
      out = img;
      continue;
    }
    if (img.width != out.width) throw ValidationError("reference slides differ in width");
    out.data.insert(out.data.end(), img.data.begin(), img.data.end());
    out.height += img.height;
  }
  if (out.data.empty()) throw ValidationError("no training slides in " + ctx.path("data/slides.csv").string());
  return out;
}

sd::Cohort load_run_cohort(const Context& ctx) {
  const fs::path csv = ctx.path("data/cohort.csv"), features = ctx.path("data/cohort_features.json");
  require_file(csv);
  require_file(features);
  return sd::load_cohort(csv, features);
}

IndexSplit cohort_split(const Context& ctx, std::size_t n) {
  return split_indices(n, ctx.cfg.get_double("prognosis.test_fraction"), derive_seed(ctx.seed(), 50));
}

gc::Checkpoint load_ckpt(const Context& ctx, const std::string& rel) {
  const fs::path p = ctx.path(rel);
  require_file(p);
  return gc::load_checkpoint(p);
}

// -------------------------------------------------------------------- synth

void cmd_synth(Context& ctx) {
  const std::size_t n = static_cast<std::size_t>(ctx.cfg.get_int("synth.slides"));
  const std::size_t n_test = static_cast<std::size_t>(ctx.cfg.get_int("synth.test_slides"));
  if (n_test == 0 || n_test >= n) throw ValidationError("synth.test_slides must be in [1, synth.slides)");
  CsvTable table;
  table.header = {"slide_id", "index", "split", "grade", "seed"};
  fs::create_directories(ctx.path("data/slides"));
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = slide_id(i);
    for (auto style : {sd::StainStyle::A, sd::StainStyle::B}) {
      const sd::SlideSpec spec = slide_spec(ctx.cfg, i, style);
      const sd::Slide s = sd::gen_slide(spec);
      save_raster(ctx.path("data/slides/" + id + "_" + sd::to_string(style) + ".png"), s.image);
      if (style == sd::StainStyle::A) {
        write_indexed_png(ctx.path("data/slides/" + id + "_mask.png"), s.image.width, s.image.height, s.mask,
                          mt::map_palette());
        write_text_file(ctx.path("data/slides/" + id + ".json"), sd::slide_spec_json(spec) + "\n");
        table.add_row({id, std::to_string(i), i + n_test >= n ? "test" : "train", std::to_string(spec.grade),
                       std::to_string(spec.seed)});
      }
    }
  }
  table.save(ctx.path("data/slides.csv"));
  const sd::CohortSpec cs = cohort_spec(ctx.cfg);
  const sd::Cohort cohort = sd::gen_cohort(cs);
  sd::save_cohort(cohort, ctx.path("data/cohort.csv"), ctx.path("data/cohort_features.json"));
  write_text_file(ctx.path("data/cohort_spec.json"), sd::cohort_spec_json(cs) + "\n");
  ctx.log("synth: " + std::to_string(n) + " slide pairs, " + std::to_string(cohort.patients.size()) +
          " patients, censored " + fmt(cohort.censored_fraction(), 4));
  ctx.out << "synthesized " << n << " slide pairs and " << cohort.patients.size() << " patients in "
          << ctx.dir.string() << "\n";
}

// ---------------------------------------------------------------- normalize

sl::StyleModel train_style(Context& ctx) {
  const std::size_t tile = static_cast<std::size_t>(ctx.cfg.get_int("style.tile"));
  sl::StyleDataset ds;
  std::vector<sl::TumorTile> tiles;
  for (const auto& e : slide_table(ctx)) {
    if (e.test) continue;
    const sd::Slide a = load_slide(ctx, e.id, sd::StainStyle::A);
    const RasterImage b = load_slide_image(ctx, e.id, sd::StainStyle::B);
    for (std::size_t r = 0; r + tile <= a.image.height; r += tile) {
      for (std::size_t c = 0; c + tile <= a.image.width; c += tile) {
        std::size_t cancer = 0;
        for (std::size_t i = 0; i < tile; ++i) {
          for (std::size_t j = 0; j < tile; ++j) cancer += a.mask_at(r + i, c + j) == sd::kCancer;
        }
        ds.style_a.push_back(crop(a.image, r, c, tile, tile));
        ds.style_b.push_back(crop(b, r, c, tile, tile));
        tiles.push_back({ds.style_a.back(), 2 * cancer > tile * tile ? 1 : 0});
      }
    }
  }
  const auto fhat = sl::train_tumor_classifier(tiles, fhat_config(ctx.cfg));
  ctx.log("normalize: tumor classifier tile accuracy " + fmt(sl::tumor_classifier_accuracy(fhat, tiles), 4));
  auto res = sl::train_style_transfer(ds, fhat, style_config(ctx.cfg), ctx.logger("normalize"));
  gc::save_checkpoint(ctx.output("checkpoints/style.ckpt"), res.checkpoint);
  res.curve.save(ctx.output("metrics/style_curve.csv"));
  return res.model;
}

struct Normalizer {
  std::string method;
  std::function<RasterImage(const RasterImage&)> apply;
};

Normalizer make_normalizer(Context* ctx, const std::string& method, const std::optional<RasterImage>& reference,
                           bool train_if_missing) {
  if (method == "reinhard" || method == "macenko") {
    if (!reference) throw ValidationError(method + " needs --reference or a run directory with synthesized slides");
    if (method == "reinhard") {
      const auto target = sl::lab_stats(*reference);
      return {method, [target](const RasterImage& img) { return sl::reinhard_normalize(img, target); }};
    }
    const auto params = ctx ? macenko_params(ctx->cfg) : sl::MacenkoParams{};
    const auto basis = sl::estimate_stain_basis(*reference, params);
    return {method, [basis, params](const RasterImage& img) { return sl::macenko_normalize(img, basis, params).image; }};
  }
  if (method == "style") {
    if (!ctx) throw ValidationError("style normalization needs --run-dir with a trained model");
    sl::StyleModel model;
    if (fs::is_regular_file(ctx->path("checkpoints/style.ckpt")) || !train_if_missing) {
      model = sl::style_from_checkpoint(load_ckpt(*ctx, "checkpoints/style.ckpt"));
    } else {
      model = train_style(*ctx);
    }
    return {method, [model](const RasterImage& img) { return sl::normalize_image(model, img); }};
  }
  throw ValidationError("unknown normalization method '" + method + "' (expected reinhard, macenko or style)");
}

double lab_distance(const RasterImage& a, const RasterImage& b) {
  const auto ma = sl::lab_stats(a).mean, mb = sl::lab_stats(b).mean;
  double s = 0;
  for (std::size_t k = 0; k < 3; ++k) s += (ma[k] - mb[k]) * (ma[k] - mb[k]);
  return std::sqrt(s);
}

struct NormScores {
  double distance = 0, ssim = 0, pcc = 0;
};

NormScores score_normalization(const RasterImage& input, const RasterImage& output, const RasterImage& twin) {
  const RasterImage gi = to_gray(input), go = to_gray(output);
  return {lab_distance(output, twin), sl::ssim(gi, go), sl::pcc(gi, go)};
}

void cmd_normalize(Context* ctx, const Options& o, std::ostream& out) {
  if (!o.input.empty()) {
    require_file(o.input);
    if (o.output.empty()) throw ValidationError("normalize --input needs --output");
    const RasterImage img = load_raster(o.input);
    std::optional<RasterImage> ref;
    if (!o.reference.empty()) {
      require_file(o.reference);
      ref = load_raster(o.reference);
    } else if (ctx && fs::is_regular_file(ctx->path("data/slides.csv"))) {
      ref = reference_image(*ctx);
    }
    const Normalizer n = make_normalizer(ctx, o.method, ref, false);
    save_raster(o.output, n.apply(img));
    out << "wrote " << o.output << "\n";
    return;
  }
  if (!ctx) throw ValidationError("normalize needs --input or --run-dir");
  const Normalizer n = make_normalizer(ctx, o.method, reference_image(*ctx), true);
  CsvTable t;
  t.header = {"slide_id", "lab_distance", "ssim", "pcc"};
  for (const auto& e : slide_table(*ctx)) {
    if (!e.test) continue;
    const RasterImage b = load_slide_image(*ctx, e.id, sd::StainStyle::B);
    const RasterImage result = n.apply(b);
    save_raster(ctx->output("normalized/" + o.method + "/" + e.id + ".png"), result);
    const auto s = score_normalization(b, result, load_slide_image(*ctx, e.id, sd::StainStyle::A));
    t.add_row({e.id, fmt(s.distance), fmt(s.ssim), fmt(s.pcc)});
  }
  t.save(ctx->output("metrics/normalize_" + o.method + ".csv"));
  ctx->log("normalize: " + o.method + " on " + std::to_string(t.rows.size()) + " held-out slides");
  out << "normalized " << t.rows.size() << " held-out slides with " << o.method << "\n";
}

// --------------------------------------------------------- train-classifier

std::vector<mt::PatchSample> slide_patches(const Context& ctx, bool test) {
  std::vector<mt::PatchSample> out;
  for (const auto& e : slide_table(ctx)) {
    if (e.test != test) continue;
    auto p = mt::extract_labeled_patches(load_slide(ctx, e.id, sd::StainStyle::A), e.id);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void cmd_train_classifier(Context& ctx) {
  const auto train = slide_patches(ctx, false);
  const auto test = slide_patches(ctx, true);
  if (train.empty()) throw ValidationError("no training patches");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(ctx.seed(), 40));
  shuffle(order, rng);
  const double f = ctx.cfg.get_double("mt.label_fraction");
  const std::size_t n_lab =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(train.size()))));
  std::vector<mt::PatchSample> labeled, unlabeled;
  for (std::size_t i = 0; i < order.size(); ++i) {
    mt::PatchSample p = train[order[i]];
    if (i < n_lab) {
      labeled.push_back(std::move(p));
    } else {
      p.label.reset();
      unlabeled.push_back(std::move(p));
    }
  }
  mt::patch_manifest(labeled).save(ctx.output("data/labeled_patches.csv"));

  const mt::MTConfig cfg = mt_config(ctx.cfg);
  const auto r = mt::train_mean_teacher(labeled, unlabeled, cfg, test, ctx.logger("train-classifier"));
  gc::save_checkpoint(ctx.output("checkpoints/mt.ckpt"), r.checkpoint);
  r.curve.save(ctx.output("metrics/classifier_curve.csv"));
  ctx.out << "teacher held-out accuracy " << fmt(mt::accuracy(r.model.teacher, test), 4) << "\n";
  if (ctx.cfg.get_bool("mt.baseline")) {
    mt::MTConfig base = cfg;
    base.consistency_weight = 0;
    const auto b = mt::train_mean_teacher(labeled, unlabeled, base, test, ctx.logger("train-classifier baseline"));
    gc::save_checkpoint(ctx.output("checkpoints/mt_baseline.ckpt"), b.checkpoint);
    b.curve.save(ctx.output("metrics/classifier_baseline_curve.csv"));
    ctx.out << "baseline held-out accuracy " << fmt(mt::accuracy(b.model.student, test), 4) << "\n";
  }
  for (const auto& e : slide_table(ctx)) {
    mt::save_map(mt::classification_map(r.model, load_slide_image(ctx, e.id, sd::StainStyle::A)),
                 ctx.output("maps/" + e.id + ".png"));
  }
}

// ---------------------------------------------------------- train-prognosis

void cmd_train_prognosis(Context& ctx) {
  const auto cohort = load_run_cohort(ctx);
  const auto patients = pg::patients_from_cohort(cohort);
  const auto split = cohort_split(ctx, patients.size());
  const pg::PrognosisConfig cfg = prognosis_config(ctx.cfg);
  const std::string head = pg::to_string(cfg.head);
  const auto r = pg::train_prognosis(select(patients, split.train), cfg, {}, ctx.logger("train-prognosis " + head));
  gc::save_checkpoint(ctx.output("checkpoints/prognosis_" + head + ".ckpt"), r.checkpoint);
  r.curve.save(ctx.output("metrics/prognosis_curve_" + head + ".csv"));
  const double metric = pg::evaluate_metric(r.model, select(patients, split.test));
  ctx.log("train-prognosis " + head + ": best epoch " + std::to_string(r.best_epoch) + " held-out " + fmt(metric, 4));
  ctx.out << head << " head held-out " << (cfg.head == pg::HeadKind::trg ? "accuracy " : "c-index ") << fmt(metric, 4)
          << "\n";
}

// ------------------------------------------------------------------ distill

void cmd_distill(Context& ctx) {
  const auto cohort = load_run_cohort(ctx);
  const DistillSettings s = distill_settings(ctx.cfg);
  const DistillRun run = run_distillation(cohort, s, ctx.logger("distill"));
  gc::save_checkpoint(ctx.output("checkpoints/kd_teacher.ckpt"), mt::mt_checkpoint(run.teacher));
  gc::save_checkpoint(ctx.output("checkpoints/kd_head.ckpt"), pg::prognosis_checkpoint(run.head));
  gc::save_checkpoint(ctx.output("checkpoints/tinyvit.ckpt"), distill::vit_checkpoint(run.student));
  run.student_curve.save(ctx.output("metrics/kd_curve.csv"));
  run.comparison.save(ctx.output("metrics/kd_comparison.csv"));
  ctx.out << "teacher c-index " << fmt(run.teacher_c, 4) << ", student c-index " << fmt(run.student_c, 4) << "\n";
}

// ----------------------------------------------------------------- evaluate

void eval_normalization(Context& ctx) {
  const RasterImage ref = reference_image(ctx);
  std::vector<Normalizer> methods{{"none", [](const RasterImage& x) { return x; }}};
  for (const char* m : {"reinhard", "macenko", "style"}) methods.push_back(make_normalizer(&ctx, m, ref, false));
  CsvTable per_slide, summary;
  per_slide.header = {"method", "slide_id", "lab_distance", "ssim", "pcc"};
  summary.header = {"method", "lab_distance", "ssim", "pcc"};
  std::vector<NormScores> sums(methods.size());
  std::size_t n = 0;
  for (const auto& e : slide_table(ctx)) {
    if (!e.test) continue;
    const RasterImage b = load_slide_image(ctx, e.id, sd::StainStyle::B);
    const RasterImage twin = load_slide_image(ctx, e.id, sd::StainStyle::A);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const auto s = score_normalization(b, methods[m].apply(b), twin);
      per_slide.add_row({methods[m].method, e.id, fmt(s.distance), fmt(s.ssim), fmt(s.pcc)});
      sums[m].distance += s.distance;
      sums[m].ssim += s.ssim;
      sums[m].pcc += s.pcc;
    }
    ++n;
  }
  const double dn = static_cast<double>(n);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    summary.add_row({methods[m].method, fmt(sums[m].distance / dn), fmt(sums[m].ssim / dn), fmt(sums[m].pcc / dn)});
  }
  per_slide.save(ctx.output("metrics/normalization_slides.csv"));
  summary.save(ctx.output("metrics/normalization.csv"));
}

void eval_classification(Context& ctx) {
  const auto test = slide_patches(ctx, true);
  const auto model = mt::mt_from_checkpoint(load_ckpt(ctx, "checkpoints/mt.ckpt"));
  std::vector<std::pair<std::string, const gc::ParamSet*>> rows{{"mean-teacher", &model.teacher},
                                                                {"mean-teacher-student", &model.student}};
  std::optional<mt::MTModel> base;
  if (ctx.cfg.get_bool("mt.baseline")) {
    base = mt::mt_from_checkpoint(load_ckpt(ctx, "checkpoints/mt_baseline.ckpt"));
    rows.push_back({"supervised-baseline", &base->student});
  }
  CsvTable t;
  t.header = {"model", "accuracy", "macro_f1"};
  for (std::size_t c = 0; c < sd::kNumClasses; ++c) t.header.push_back(std::string("f1_") + sd::class_name(c));
  for (const auto& [name, params] : rows) {
    const auto s = class_scores(mt::predict(*params, test), test);
    std::vector<std::string> row{name, fmt(s.accuracy), fmt(s.macro_f1)};
    for (double f : s.f1) row.push_back(fmt(f));
    t.add_row(std::move(row));
  }
  t.save(ctx.output("metrics/classification.csv"));
}

void eval_label_fraction(Context& ctx) {
  const auto patients = pg::patients_from_cohort(load_run_cohort(ctx));
  const auto seeds = static_cast<std::size_t>(ctx.cfg.get_int("evaluate.seeds"));
  if (seeds == 0) throw ValidationError("evaluate.seeds must be positive");
  std::vector<PatientSplit> splits;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto idx = split_indices(patients.size(), ctx.cfg.get_double("prognosis.test_fraction"),
                                   derive_seed(ctx.seed(), 60 + s));
    splits.push_back({select(patients, idx.train), select(patients, idx.test)});
  }
  const auto fractions = ctx.cfg.get_double_list("evaluate.label_fractions");
  const auto r = label_fraction_report(splits, prognosis_config(ctx.cfg), fractions);
  r.per_seed.save(ctx.output("metrics/label_fraction.csv"));
  CsvTable mean = r.mean;
  mean.add_row({"spearman_rho", fmt(r.rho), ""});
  mean.save(ctx.output("metrics/label_fraction_mean.csv"));
  PlotSpec plot{"Held-out c-index by label fraction", "labeled fraction", "c-index", {}};
  for (std::size_t s = 0; s < seeds; ++s) {
    PlotSeries ser{"split " + std::to_string(s), fractions, {}, false};
    for (std::size_t k = 0; k < fractions.size(); ++k) {
      ser.y.push_back(std::stod(r.per_seed.rows[s * fractions.size() + k][3]));
    }
    plot.series.push_back(std::move(ser));
  }
  plot.series.push_back({"mean", fractions, r.means, false});
  write_svg(ctx.output("figures/label_fraction.svg"), plot);
  ctx.log("evaluate: label-fraction spearman " + fmt(r.rho, 4));
}

void eval_survival(Context& ctx) {
  const auto cohort = load_run_cohort(ctx);
  const auto patients = pg::patients_from_cohort(cohort);
  const auto test = select(patients, cohort_split(ctx, patients.size()).test);
  const auto records = pg::records_of(test);
  std::vector<double> oracle;
  for (std::size_t i : cohort_split(ctx, patients.size()).test) oracle.push_back(cohort.patients[i].oracle_risk);
  const double oracle_c = pg::concordance_index(oracle, records);
  const auto resamples = static_cast<std::size_t>(ctx.cfg.get_int("evaluate.bootstrap"));

  CsvTable t;
  t.header = {"head", "aggregation_strategy", "endpoint", "c_index", "ci_low", "ci_high", "oracle_c_index"};
  std::optional<std::vector<double>> strat_risks;
  for (const char* head : {"cox", "discrete"}) {
    const std::string rel = std::string("checkpoints/prognosis_") + head + ".ckpt";
    if (!fs::is_regular_file(ctx.path(rel)) && strat_risks) continue;
    const auto model = pg::prognosis_from_checkpoint(load_ckpt(ctx, rel));
    const auto risks = pg::predict_risks(model, test);
    const auto ci = pg::bootstrap_cindex(risks, records, resamples, derive_seed(ctx.seed(), 70));
    t.add_row({head, pg::to_string(model.cfg.aggregation), cohort.spec.endpoint, fmt(ci.estimate), fmt(ci.low),
               fmt(ci.high), fmt(oracle_c)});
    if (!strat_risks) strat_risks = risks;
  }
  t.save(ctx.output("metrics/prognosis.csv"));

  const auto st = pg::stratify_risks(*strat_risks, records);
  CsvTable km;
  km.header = {"group", "time", "survival", "at_risk", "events", "censored"};
  PlotSpec plot{"Kaplan-Meier by median predicted risk", "months", "survival", {}};
  for (const auto& [name, curve] : {std::pair{"low", &st.km_low}, std::pair{"high", &st.km_high}}) {
    PlotSeries ser{std::string(name) + " risk", {}, {}, true};
    for (const auto& p : *curve) {
      km.add_row({name, fmt(p.time), fmt(p.survival), std::to_string(p.at_risk), std::to_string(p.events),
                  std::to_string(p.censored)});
      ser.x.push_back(p.time);
      ser.y.push_back(p.survival);
    }
    plot.series.push_back(std::move(ser));
  }
  km.save(ctx.output("metrics/km.csv"));
  write_svg(ctx.output("figures/km.svg"), plot);
  CsvTable lr;
  lr.header = {"threshold", "n_low", "n_high", "statistic", "p_value"};
  const auto n_high = static_cast<std::size_t>(std::count(st.high.begin(), st.high.end(), true));
  lr.add_row({fmt(st.threshold), std::to_string(st.high.size() - n_high), std::to_string(n_high),
              st.has_test ? fmt(st.test.statistic) : "nan", st.has_test ? fmt(st.test.p_value, 8) : "nan"});
  lr.save(ctx.output("metrics/logrank.csv"));
}

void eval_trg(Context& ctx) {
  const auto patients = pg::patients_from_cohort(load_run_cohort(ctx));
  const auto split = cohort_split(ctx, patients.size());
  const auto train = select(patients, split.train), test = select(patients, split.test);
  CsvTable t;
  t.header = {"grouping", "classes", "accuracy", "majority_baseline"};
  for (const auto& raw : histoprog::split(ctx.cfg.get("evaluate.trg_groupings"), ';')) {
    const std::string name = trim(raw);
    if (name.empty()) continue;
    pg::PrognosisConfig cfg = prognosis_config(ctx.cfg);
    cfg.head = pg::HeadKind::trg;
    cfg.trg_grouping = name;
    const auto grouping = pg::trg_grouping_from_string(name);
    const auto model = pg::train_prognosis(train, cfg, {}, ctx.logger("evaluate trg " + name)).model;
    std::vector<std::size_t> counts(grouping.classes(), 0);
    for (const auto& p : train) ++counts[static_cast<std::size_t>(grouping.group(p.trg))];
    const auto majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::size_t hit = 0;
    for (const auto& p : test) hit += grouping.group(p.trg) == majority;
    t.add_row({name, std::to_string(grouping.classes()), fmt(pg::evaluate_metric(model, test)),
               fmt(static_cast<double>(hit) / static_cast<double>(test.size()))});
  }
  t.save(ctx.output("metrics/trg.csv"));
}

void eval_kd(Context& ctx) {
  const auto cohort = load_run_cohort(ctx);
  const DistillSettings s = distill_settings(ctx.cfg);
  const auto teacher = mt::mt_from_checkpoint(load_ckpt(ctx, "checkpoints/kd_teacher.ckpt"));
  const auto head = pg::prognosis_from_checkpoint(load_ckpt(ctx, "checkpoints/kd_head.ckpt"));
  const auto student = distill::vit_from_checkpoint(load_ckpt(ctx, "checkpoints/tinyvit.ckpt"));
  const auto split = split_indices(cohort.patients.size(), s.test_fraction, derive_seed(s.seed, 3));
  kd_comparison(cohort, teacher, head, student, split, s).save(ctx.output("metrics/kd_comparison.csv"));
}

const std::vector<std::pair<std::string, void (*)(Context&)>>& sections() {
  static const std::vector<std::pair<std::string, void (*)(Context&)>> s{
      {"normalization", eval_normalization}, {"classification", eval_classification},
      {"label_fraction", eval_label_fraction}, {"survival", eval_survival},
      {"trg", eval_trg},                     {"kd", eval_kd}};
  return s;
}

void cmd_evaluate(Context& ctx, const std::string& wanted) {
  std::vector<std::string> names;
  for (const auto& w : split(wanted, ',')) {
    if (!trim(w).empty()) names.push_back(trim(w));
  }
  for (const auto& n : names) {
    const bool known = std::any_of(sections().begin(), sections().end(), [&](const auto& s) { return s.first == n; });
    if (!known) throw ValidationError("unknown evaluate section '" + n + "'");
  }
  for (const auto& [name, fn] : sections()) {
    if (!names.empty() && std::find(names.begin(), names.end(), name) == names.end()) continue;
    fn(ctx);
    ctx.log("evaluate: " + name + " done");
    ctx.out << "evaluated " << name << "\n";
  }
}

// ------------------------------------------------------------------- report

const std::vector<std::pair<std::string, std::string>>& report_tables() {
  static const std::vector<std::pair<std::string, std::string>> t{
      {"Stain normalization", "metrics/normalization.csv"},
      {"Patch classification", "metrics/classification.csv"},
      {"C-index by label fraction", "metrics/label_fraction_mean.csv"},
      {"C-index by label fraction, per split", "metrics/label_fraction.csv"},
      {"Prognosis heads", "metrics/prognosis.csv"},
      {"Risk stratification", "metrics/logrank.csv"},
      {"Kaplan-Meier curves", "metrics/km.csv"},
      {"TRG prediction", "metrics/trg.csv"},
      {"Distillation comparison", "metrics/kd_comparison.csv"}};
  return t;
}

const std::vector<std::string>& report_figures() {
  static const std::vector<std::string> f{"figures/label_fraction.svg", "figures/km.svg"};
  return f;
}

std::string markdown_table(const CsvTable& t) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s = "|";
    for (const auto& c : cells) s += " " + c + " |";
    return s + "\n";
  };
  std::string out = line(t.header);
  out += line(std::vector<std::string>(t.header.size(), "---"));
  for (const auto& r : t.rows) out += line(r);
  return out;
}

void cmd_report(Context& ctx) {
  std::vector<std::string> missing;
  for (const auto& [title, rel] : report_tables()) {
    if (!fs::is_regular_file(ctx.path(rel))) missing.push_back(ctx.path(rel).string());
  }
  for (const auto& rel : report_figures()) {
    if (!fs::is_regular_file(ctx.path(rel))) missing.push_back(ctx.path(rel).string());
  }
  if (!missing.empty()) {
    std::string msg = "report: missing upstream artifacts:";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }
  std::string md = "# Run report\n\n";
  for (const auto& [title, rel] : report_tables()) {
    md += "## " + title + "\n\n" + markdown_table(read_csv(ctx.path(rel))) + "\n";
  }
  md += "## Figures\n\n";
  for (const auto& rel : report_figures()) md += "![" + fs::path(rel).stem().string() + "](" + rel + ")\n";
  write_text_file(ctx.path("report.md"), md);
  ctx.log("report: written");
  ctx.out << "wrote " << ctx.path("report.md").string() << "\n";
}

void add_common(CLI::App* sub, Options& o, bool dir_required) {
  auto* d = sub->add_option("--run-dir", o.run_dir, "run directory");
  if (dir_required) d->required();
  sub->add_option("--config", o.config_file, "key=value config file");
  sub->add_option("--set", o.sets, "override one setting, key=value");
  sub->add_option("--seed", o.seed, "base seed");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Histopathology prognosis pipeline"};
  app.require_subcommand(1);
  Options o;
  auto* synth = app.add_subcommand("synth", "generate synthetic slides and a patient cohort");
  add_common(synth, o, true);
  auto* normalize = app.add_subcommand("normalize", "stain-normalize an image or the held-out slides");
  add_common(normalize, o, false);
  normalize->add_option("--method", o.method, "reinhard, macenko or style")->required();
  normalize->add_option("--input", o.input, "single image to normalize");
  normalize->add_option("--output", o.output, "output PNG for --input");
  normalize->add_option("--reference", o.reference, "reference image for reinhard or macenko");
  auto* classifier = app.add_subcommand("train-classifier", "train the mean-teacher patch classifier");
  add_common(classifier, o, true);
  auto* prognosis = app.add_subcommand("train-prognosis", "train a prognosis head on the cohort");
  add_common(prognosis, o, true);
  prognosis->add_option("--head", o.head, "cox, discrete or trg");
  auto* distill = app.add_subcommand("distill", "distill a TinyViT student from a classifier teacher");
  add_common(distill, o, true);
  auto* evaluate = app.add_subcommand("evaluate", "compute metric tables and figures");
  add_common(evaluate, o, true);
  evaluate->add_option("--sections", o.sections, "comma list of sections (default all)");
  auto* report = app.add_subcommand("report", "assemble report.md from evaluated artifacts");
  add_common(report, o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    const fs::path dir = o.run_dir;
    std::optional<RunLock> lock;
    std::optional<Context> ctx;
    if (!dir.empty()) {
      KeyValueConfig cfg = resolve_config(dir, o);
      if (!o.head.empty()) cfg.set("prognosis.head", o.head);
      lock.emplace(dir);
      write_text_file(dir / "config.resolved", cfg.resolved());
      ctx.emplace(dir, std::move(cfg), out);
      ctx->log("command " + app.get_subcommands().front()->get_name());
    }
    if (app.got_subcommand(synth)) cmd_synth(*ctx);
    if (app.got_subcommand(normalize)) cmd_normalize(ctx ? &*ctx : nullptr, o, out);
    if (app.got_subcommand(classifier)) cmd_train_classifier(*ctx);
    if (app.got_subcommand(prognosis)) cmd_train_prognosis(*ctx);
    if (app.got_subcommand(distill)) cmd_distill(*ctx);
    if (app.got_subcommand(evaluate)) cmd_evaluate(*ctx, o.sections);
    if (app.got_subcommand(report)) cmd_report(*ctx);
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace histoprog::cli
