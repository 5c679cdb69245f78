// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
// Exit status is 0 unless --strict is given and a criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "histoprog/cli/cli.hpp"
#include "histoprog/distill/distill.hpp"
#include "histoprog/gradcore/grad_check.hpp"
#include "histoprog/meanteacher/meanteacher.hpp"
#include "histoprog/prognosis/model.hpp"
#include "histoprog/prognosis/survival.hpp"
#include "histoprog/stainlab/macenko.hpp"
#include "histoprog/stainlab/metrics.hpp"
#include "histoprog/stainlab/style.hpp"
#include "histoprog/synthdata/synthdata.hpp"

using namespace histoprog;
namespace fs = std::filesystem;
namespace gc = histoprog::gradcore;
namespace pg = histoprog::prognosis;
namespace sd = histoprog::synthdata;
namespace sl = histoprog::stainlab;
namespace mt = histoprog::meanteacher;
namespace ds = histoprog::distill;
using gc::Tensor;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;

void emit(int id, const std::string& name, const Verdict& v) {
  std::printf("C%-2d %s  %s: %s\n", id, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++g_failed;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string f(double v, int p = 4) { return fmt(v, p); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

Tensor random_tensor(gc::Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

std::vector<pg::SurvivalRecord> records(const std::vector<double>& t, const std::vector<int>& e) {
  std::vector<pg::SurvivalRecord> r;
  for (std::size_t i = 0; i < t.size(); ++i) r.push_back({"p" + std::to_string(i), t[i], e[i] != 0, pg::Endpoint::OS});
  return r;
}

std::vector<pg::SurvivalRecord> random_records(std::size_t n, double censor_rate, Rng& rng) {
  std::vector<pg::SurvivalRecord> r;
  for (std::size_t i = 0; i < n; ++i) {
    r.push_back({"p" + std::to_string(i), 1.0 + static_cast<double>(uniform_index(rng, 30)), uniform(rng) >= censor_rate,
                 pg::Endpoint::OS});
  }
  if (std::none_of(r.begin(), r.end(), [](const auto& x) { return x.event; })) r[0].event = true;
  return r;
}

int run_cli(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "histoprog");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  if (code != 0) std::fprintf(stderr, "  cli %s -> %d: %s", args[1].c_str(), code, err.str().c_str());
  return code;
}

std::map<std::string, std::vector<std::string>> rows_by_first(const CsvTable& t) {
  std::map<std::string, std::vector<std::string>> m;
  for (const auto& r : t.rows) m[r[0]] = r;
  return m;
}

// ------------------------------------------------------------------- C1

Verdict gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kInstances = 20;
  Rng rng(101);
  std::vector<std::pair<std::string, std::function<double()>>> losses;
  auto rel = [](const gc::ScalarFn& fn, const Tensor& x) { return gc::grad_check(fn, x, 1e-5).max_rel_error; };

  losses.push_back({"ssim-recon", [&] {
                      const Tensor x = random_tensor({2, 12 * 16}, rng, 0, 1), y = random_tensor({2, 12 * 16}, rng, 0, 1);
                      return std::max(rel([&](const gc::Var& v) { return sl::recon_loss(gc::constant(x), v, 12, 16); }, y),
                                      rel([&](const gc::Var& v) { return sl::recon_loss(v, gc::constant(y), 12, 16); }, x));
                    }});
  losses.push_back({"adversarial", [&] {
                      gc::ParamSet disc;
                      gc::init_mlp(disc, sl::discriminator_spec(), rng);
                      const Tensor real = random_tensor({3, 1}, rng, 0.05, 0.95), fake = random_tensor({4, 1}, rng, 0.05, 0.95);
                      const Tensor img = random_tensor({2 * 16 * 16, 3}, rng, 0, 1);
                      double e = rel([&](const gc::Var& v) { return sl::adversarial_losses(v, gc::constant(fake)).d_loss; }, real);
                      e = std::max(e, rel([&](const gc::Var& v) { return sl::adversarial_losses(gc::constant(real), v).d_loss; }, fake));
                      return std::max(e, rel(
                                             [&](const gc::Var& v) {
                                               return sl::adversarial_losses(gc::constant(Tensor({1, 1}, 0.5)),
                                                                             sl::discriminate(disc, v, 2, 16, 16))
                                                   .g_loss;
                                             },
                                             img));
                    }});
  losses.push_back({"feature-preserving", [&] {
                      gc::ParamSet fhat;
                      gc::init_mlp(fhat, sl::classifier_pixel_spec(), rng);
                      gc::init_mlp(fhat, sl::classifier_head_spec(), rng);
                      const Tensor ref = random_tensor({32, 3}, rng, 0, 1), gen = random_tensor({32, 3}, rng, 0, 1);
                      return rel([&](const gc::Var& v) { return sl::feature_preserving_loss(fhat, gc::constant(ref), v, 2, 2.0); },
                                 gen);
                    }});
  losses.push_back({"consistency", [&] {
                      const Tensor q = gc::softmax_rows(gc::constant(random_tensor({6, 5}, rng, -2, 2))).value();
                      return rel([&](const gc::Var& v) { return mt::consistency_loss(gc::softmax_rows(v), gc::constant(q)); },
                                 random_tensor({6, 5}, rng, -2, 2));
                    }});
  losses.push_back({"cox-partial-likelihood", [&] {
                      const auto rec = random_records(10, 0.3, rng);
                      return rel([&](const gc::Var& v) { return pg::cox_pl_loss(v, rec); }, random_tensor({10, 1}, rng, -2, 2));
                    }});
  losses.push_back({"censored-ce", [&] {
                      const auto rec = random_records(10, 0.4, rng);
                      const auto grid = pg::time_grid_from_bounds({0, 8, 16, 24});
                      return rel([&](const gc::Var& v) { return pg::censored_ce_loss(gc::softmax_rows(v), rec, grid).loss; },
                                 random_tensor({10, 4}, rng, -2, 2));
                    }});
  losses.push_back({"kd-gan", [&] {
                      gc::ParamSet disc;
                      gc::init_mlp(disc, ds::discriminator_spec(5), rng);
                      const Tensor t = random_tensor({4, 5}, rng, -2, 2);
                      const std::vector<int> labels{0, 3, -1, 4};
                      return rel([&](const gc::Var& v) { return ds::kd_gan_loss(v, t, labels, disc, ds::KDConfig{}).total; },
                                 random_tensor({4, 5}, rng, -2, 2));
                    }});
  losses.push_back({"crd", [&] {
                      const gc::Var a = gc::constant(random_tensor({3, 6}, rng));
                      const gc::Var neg = gc::constant(random_tensor({3, 2, 6}, rng));
                      return rel([&](const gc::Var& v) { return ds::crd_loss(v, a, neg, ds::KDConfig{}.tau); },
                                 random_tensor({3, 6}, rng));
                    }});

  bool ok = true;
  std::string detail;
  for (auto& [name, fn] : losses) {
    double worst = 0;
    for (int i = 0; i < kInstances; ++i) worst = std::max(worst, fn());
    ok = ok && worst < 1e-4;
    detail += name + " " + sci(worst) + ", ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60;
  return {ok, detail + std::to_string(kInstances) + " instances each, " + f(secs, 1) + " s (limits 1e-4, 60 s)"};
}

// ------------------------------------------------------------------- C2

Verdict metric_oracles() {
  Rng rng(202);
  std::size_t exact = 0;
  constexpr int kInstances = 50;
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 199);
    const auto rec = random_records(n, uniform(rng, 0.0, 0.5), rng);
    std::vector<double> risk(n);
    const bool coarse = t % 2 == 0;
    for (double& r : risk) r = coarse ? static_cast<double>(uniform_index(rng, 5)) : normal(rng);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || !rec[i].event) continue;
        if (!(rec[i].time < rec[j].time || (rec[i].time == rec[j].time && !rec[j].event))) continue;
        den += 1;
        num += risk[i] > risk[j] ? 1.0 : risk[i] == risk[j] ? 0.5 : 0.0;
      }
    }
    if (den == 0) {
      ++exact;  // no comparable pairs: both sides undefined
      continue;
    }
    exact += pg::concordance_index(risk, rec) == num / den;
  }

  double worst = 0;
  // KM: all events at 1,2,3; then one censored at 1.5 between events at 1 and 2.
  const auto km1 = pg::kaplan_meier(records({1, 2, 3}, {1, 1, 1}));
  worst = std::max({worst, std::abs(pg::survival_at(km1, 1) - 2.0 / 3.0), std::abs(pg::survival_at(km1, 2.5) - 1.0 / 3.0),
                    std::abs(pg::survival_at(km1, 3) - 0.0)});
  const auto km2 = pg::kaplan_meier(records({1, 2, 1.5}, {1, 1, 0}));
  worst = std::max({worst, std::abs(pg::survival_at(km2, 1.7) - 2.0 / 3.0), std::abs(pg::survival_at(km2, 2) - 0.0)});
  // Six subjects, events at 1,2,4,5 (one censored at 3, one at 6):
  // S = 5/6, 5/6*4/5, then 4/6 * 2/3, then * 1/2.
  const auto km3 = pg::kaplan_meier(records({1, 2, 3, 4, 5, 6}, {1, 1, 0, 1, 1, 0}));
  worst = std::max({worst, std::abs(pg::survival_at(km3, 1) - 5.0 / 6.0), std::abs(pg::survival_at(km3, 2) - 4.0 / 6.0),
                    std::abs(pg::survival_at(km3, 4) - 4.0 / 9.0), std::abs(pg::survival_at(km3, 5.5) - 2.0 / 9.0)});
  // Log-rank: A = {1,3,5+}, B = {2,4,6}.
  const auto lr = pg::log_rank_test(records({1, 3, 5}, {1, 1, 0}), records({2, 4, 6}, {1, 1, 1}));
  worst = std::max({worst, std::abs(lr.expected_a - (0.5 + 0.4 + 0.5 + 1.0 / 3.0)),
                    std::abs(lr.variance - (0.25 + 0.24 + 0.25 + 2.0 / 9.0)), std::abs(lr.statistic - 32.0 / 433.0),
                    std::abs(lr.p_value - std::erfc(std::sqrt(16.0 / 433.0)))});
  const bool ok = exact == kInstances && worst < 1e-9;
  return {ok, std::to_string(exact) + "/" + std::to_string(kInstances) +
                  " c-index instances bitwise equal to brute force (n<=200, 0-50% censoring); KM/log-rank max error " +
                  sci(worst) + " (limit 1e-9)"};
}

// --------------------------------------------------------------- C3 C4 C10

struct SurvivalOutcome {
  double cox = 0, discrete = 0, oracle = 0, cox_secs = 0, p_value = 1;
};

SurvivalOutcome survival_recovery() {
  sd::CohortSpec cs;
  cs.seed = 11;
  cs.n_patients = 500;
  cs.beta = sd::strong_beta();
  cs.censoring_rate = 0.3;
  const auto cohort = sd::gen_cohort(cs);
  const auto patients = pg::patients_from_cohort(cohort);
  const auto split = cli::split_indices(patients.size(), 0.3, 12);
  const auto train = cli::select(patients, split.train), test = cli::select(patients, split.test);
  std::vector<double> oracle;
  for (std::size_t i : split.test) oracle.push_back(cohort.patients[i].oracle_risk);
  SurvivalOutcome o;
  o.oracle = pg::concordance_index(oracle, pg::records_of(test));

  pg::PrognosisConfig cfg;
  cfg.seed = 13;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cox = pg::train_prognosis(train, cfg).model;
  const auto risks = pg::predict_risks(cox, test);
  o.cox = pg::concordance_index(risks, pg::records_of(test));
  o.cox_secs = seconds_since(t0);
  const auto strat = pg::stratify_risks(risks, pg::records_of(test));
  o.p_value = strat.has_test ? strat.test.p_value : 1.0;

  cfg.head = pg::HeadKind::discrete;
  o.discrete = pg::evaluate_metric(pg::train_prognosis(train, cfg).model, test);
  return o;
}

// ---------------------------------------------------------------- C5 C8

struct CliRun {
  fs::path dir;
  bool ok = false;
  double normalize_secs = 0;
};

CliRun prepare_cli_run() {
  CliRun r;
  r.dir = fs::temp_directory_path() / "histoprog_acceptance_run";
  fs::remove_all(r.dir);
  if (run_cli({"synth", "--run-dir", r.dir.string(), "--seed", "3", "--set", "synth.slides=10", "--set",
               "synth.test_slides=4"}) != 0) {
    return r;
  }
  const auto t0 = std::chrono::steady_clock::now();
  r.ok = run_cli({"normalize", "--method", "style", "--run-dir", r.dir.string()}) == 0 &&
         run_cli({"evaluate", "--sections", "normalization", "--run-dir", r.dir.string()}) == 0;
  r.normalize_secs = seconds_since(t0);
  return r;
}

Verdict normalization(const CliRun& run) {
  if (!run.ok) return {false, "pipeline did not complete"};
  const auto m = rows_by_first(read_csv(run.dir / "metrics/normalization.csv"));
  auto dist = [&](const char* k) { return std::stod(m.at(k)[1]); };
  const double none = dist("none"), rh = dist("reinhard"), mk = dist("macenko"), st = dist("style");
  const double ssim = std::stod(m.at("style")[2]);
  const bool a = st <= 0.5 * none, b = ssim >= 0.85, c_re = st < rh, c_mk = st <= mk + 2.3;
  const bool time_ok = run.normalize_secs < 300;
  return {a && b && c_re && c_mk && time_ok,
          "(a) distance " + f(none, 2) + " -> " + f(st, 2) + " (" + f(100 * (1 - st / none), 1) + "% shrink, need 50%) " +
              (a ? "ok" : "FAIL") + "; (b) SSIM " + f(ssim, 3) + " (need 0.85) " + (b ? "ok" : "FAIL") +
              "; (c) vs Reinhard " + f(rh, 2) + " " + (c_re ? "ok" : "FAIL") + ", vs Macenko " + f(mk, 2) +
              " (match = within 2.3) " + (c_mk ? "ok" : "FAIL") + "; " + f(run.normalize_secs, 0) + " s (limit 300)"};
}

Verdict label_fraction(const CliRun& run) {
  if (!run.ok) return {false, "pipeline did not complete"};
  if (run_cli({"evaluate", "--sections", "label_fraction", "--run-dir", run.dir.string()}) != 0) {
    return {false, "evaluate failed"};
  }
  const auto t = read_csv(run.dir / "metrics/label_fraction_mean.csv");
  const auto per_seed = read_csv(run.dir / "metrics/label_fraction.csv");
  std::vector<double> fr, mean;
  double rho = 0;
  for (const auto& r : t.rows) {
    if (r[0] == "spearman_rho") {
      rho = std::stod(r[1]);
    } else {
      fr.push_back(std::stod(r[0]));
      mean.push_back(std::stod(r[1]));
    }
  }
  std::size_t seeds = 0;
  for (const auto& r : per_seed.rows) seeds = std::max<std::size_t>(seeds, std::stoul(r[0]) + 1);
  const bool fractions_ok = fr == std::vector<double>{0.125, 0.25, 0.375, 0.5, 0.75, 1.0};
  std::string curve;
  for (double v : mean) curve += f(v, 3) + " ";
  return {fractions_ok && seeds == 5 && rho >= 0.6,
          "mean c-index over " + std::to_string(seeds) + " seeds at 12.5..100%: " + curve + "; Spearman rho " + f(rho, 3) +
              " (need 0.6)"};
}

// ------------------------------------------------------------------- C6

Verdict macenko_recovery() {
  double worst = 0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    sd::SlideSpec sp;
    sp.seed = 600 + s;
    sp.height = sp.width = 256;
    sp.regions = 40;
    sp.grade = 1 + static_cast<int>(s % 5);
    sp.stain_jitter = 0.05;
    const auto slide = sd::gen_slide(sp);
    const auto b = sl::estimate_stain_basis(slide.image);
    worst = std::max({worst, sl::angle_degrees(b.h, slide.h_vector), sl::angle_degrees(b.e, slide.e_vector)});
  }
  return {worst < 5.0, "worst angular error over 20 slides " + f(worst, 2) + " deg (limit 5)"};
}

// ------------------------------------------------------------------- C7

Verdict mean_teacher_gain() {
  std::vector<mt::PatchSample> train, test;
  for (int s = 0; s < 8; ++s) {
    sd::SlideSpec sp;
    sp.seed = 1000 + static_cast<std::uint64_t>(s);
    sp.height = sp.width = 256;
    sp.grade = 1 + s % 5;
    sp.regions = 40;
    auto p = mt::extract_labeled_patches(sd::gen_slide(sp), "S" + std::to_string(s));
    auto& dst = s < 4 ? train : test;
    dst.insert(dst.end(), p.begin(), p.end());
  }
  double gain = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    shuffle(idx, rng);
    std::vector<mt::PatchSample> lab, unl;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (static_cast<double>(i) < 0.1 * static_cast<double>(idx.size())) {
        lab.push_back(train[idx[i]]);
      } else {
        auto p = train[idx[i]];
        p.label.reset();
        unl.push_back(std::move(p));
      }
    }
    mt::MTConfig cfg;
    cfg.epochs = 40;
    cfg.seed = seed;
    const double teacher = mt::accuracy(mt::train_mean_teacher(lab, unl, cfg).model.teacher, test);
    cfg.consistency_weight = 0;
    const double baseline = mt::accuracy(mt::train_mean_teacher(lab, unl, cfg).model.student, test);
    gain += (teacher - baseline) / 5;
    per_seed += f(100 * (teacher - baseline), 1) + " ";
  }
  return {gain >= 0.02, "teacher minus supervised baseline, points per seed: " + per_seed + "; mean " + f(100 * gain, 2) +
                            " (need 2)"};
}

// ------------------------------------------------------------------- C9

Verdict distillation() {
  sd::CohortSpec cs;
  cs.seed = 1;
  cs.n_patients = 300;
  cs.beta = sd::strong_beta();
  const auto cohort = sd::gen_cohort(cs);
  cli::DistillSettings s;
  s.teacher.epochs = 15;
  s.student.epochs = 5;
  s.seed = 1;
  s.head.seed = 1;
  s.student.seed = 1;
  const auto run = cli::run_distillation(cohort, s);
  const double gap = std::abs(run.teacher_c - run.student_c);

  ds::TinyVitConfig vc;
  vc.positional = false;
  double worst = 0;
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const ds::TinyVit m = ds::init_tiny_vit(vc, 50 + static_cast<std::uint64_t>(trial));
    const Tensor tokens = random_tensor({ds::kTokens, ds::kTokenDim}, rng);
    std::vector<std::size_t> perm(ds::kTokens);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    Tensor permuted({ds::kTokens, ds::kTokenDim});
    for (std::size_t t = 0; t < ds::kTokens; ++t) {
      std::copy_n(&tokens.at(t, 0), ds::kTokenDim, &permuted.at(perm[t], 0));
    }
    const Tensor a = ds::tiny_vit_forward_tokens(m, tokens).logits.value();
    const Tensor b = ds::tiny_vit_forward_tokens(m, permuted).logits.value();
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  return {gap <= 0.05 && worst <= 1e-12, "teacher c-index " + f(run.teacher_c) + ", student " + f(run.student_c) +
                                             " (gap " + f(gap) + ", limit 0.05); permutation max |diff| " + sci(worst) +
                                             " without positional embeddings (summation-order limit 1e-12)"};
}

// ------------------------------------------------------------------ C11

Verdict aggregation_equivalences() {
  Rng rng(1111);
  std::size_t equal = 0, identity = 0;
  constexpr std::size_t kInstances = 200;
  for (std::size_t t = 0; t < kInstances; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 6), d = 1 + uniform_index(rng, 8);
    const double vol = std::exp(uniform(rng, -3, 3));
    std::vector<pg::LesionFeature> les;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x(d);
      for (double& v : x) v = uniform(rng, -5, 5);
      les.push_back({x, vol});
    }
    equal += pg::aggregate_lesions(les, pg::Aggregation::weighted) == pg::aggregate_lesions(les, pg::Aggregation::mean);
    const std::vector<pg::LesionFeature> one{{les[0].features, std::exp(uniform(rng, -3, 3))}};
    bool same = true;
    for (auto a : {pg::Aggregation::max, pg::Aggregation::mean, pg::Aggregation::weighted}) {
      same = same && pg::aggregate_lesions(one, a) == les[0].features;
    }
    identity += same;
  }
  return {equal == kInstances && identity == kInstances,
          "weighted==mean bitwise on " + std::to_string(equal) + "/" + std::to_string(kInstances) +
              " equal-volume instances; single-lesion identity for max/mean/weighted on " + std::to_string(identity) +
              "/" + std::to_string(kInstances)};
}

// ------------------------------------------------------------------ C12

std::map<std::string, std::string> metrics_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir / "metrics")) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[e.path().filename().string()] = ss.str();
  }
  return out;
}

Verdict determinism() {
  const std::vector<std::string> small{
      "synth.slides=3",       "synth.test_slides=1",     "synth.slide_size=128",  "synth.patients=80",
      "style.epochs=2",       "style.classifier_epochs=2", "mt.epochs=2",         "prognosis.epochs=60",
      "evaluate.seeds=2",     "evaluate.bootstrap=20",   "distill.teacher_patches=50", "distill.teacher_epochs=2",
      "distill.student_images=100", "distill.epochs=1"};
  std::vector<std::map<std::string, std::string>> results;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = fs::temp_directory_path() / ("histoprog_acceptance_det_" + std::to_string(rep));
    fs::remove_all(dir);
    std::vector<std::string> base{"--run-dir", dir.string(), "--seed", "5"};
    for (const auto& s : small) {
      base.push_back("--set");
      base.push_back(s);
    }
    auto with = [&](std::vector<std::string> cmd) {
      cmd.insert(cmd.end(), base.begin(), base.end());
      return cmd;
    };
    for (const auto& cmd : std::vector<std::vector<std::string>>{{"synth"},
                                                                 {"normalize", "--method", "style"},
                                                                 {"train-classifier"},
                                                                 {"train-prognosis"},
                                                                 {"train-prognosis", "--head", "discrete"},
                                                                 {"distill"},
                                                                 {"evaluate"},
                                                                 {"report"}}) {
      if (run_cli(with(cmd)) != 0) return {false, "pipeline step " + cmd[0] + " failed"};
    }
    results.push_back(metrics_files(dir));
  }
  std::size_t same = 0;
  std::string diff;
  for (const auto& [name, bytes] : results[0]) {
    auto it = results[1].find(name);
    if (it != results[1].end() && it->second == bytes) {
      ++same;
    } else {
      diff += " " + name;
    }
  }
  const bool ok = same == results[0].size() && results[0].size() == results[1].size() && !results[0].empty();
  return {ok, std::to_string(same) + "/" + std::to_string(results[0].size()) +
                  " metrics CSVs byte-identical across two full runs" + (diff.empty() ? "" : "; differ:" + diff)};
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const auto t0 = std::chrono::steady_clock::now();

  emit(1, "gradient checks", gradient_checks());
  emit(2, "metric oracles", metric_oracles());

  const auto surv = survival_recovery();
  emit(3, "cox recovery",
       {surv.cox >= 0.95 * surv.oracle && surv.cox_secs < 120,
        "held-out c-index " + f(surv.cox) + " vs oracle " + f(surv.oracle) + " (ratio " + f(surv.cox / surv.oracle, 3) +
            ", need 0.95); " + f(surv.cox_secs, 1) + " s (limit 120)"});
  emit(4, "discrete-time head",
       {std::abs(surv.discrete - surv.cox) <= 0.05,
        "held-out c-index " + f(surv.discrete) + " vs cox " + f(surv.cox) + " (gap " + f(std::abs(surv.discrete - surv.cox)) +
            ", limit 0.05)"});

  const CliRun run = prepare_cli_run();
  emit(5, "normalization", normalization(run));
  emit(6, "Macenko stain recovery", macenko_recovery());
  emit(7, "Mean Teacher SSL gain", mean_teacher_gain());
  emit(8, "label-fraction curve", label_fraction(run));
  emit(9, "distillation", distillation());
  {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", surv.p_value);
    emit(10, "risk stratification",
         {surv.p_value < 0.05, "median-risk split on held-out strong-beta patients, log-rank p " + std::string(buf) +
                                   " (need < 0.05)"});
  }
  emit(11, "aggregation equivalences", aggregation_equivalences());
  emit(12, "determinism", determinism());

  std::printf("%d/12 criteria passed in %.0f s\n", 12 - g_failed, seconds_since(t0));
  return strict && g_failed > 0 ? 1 : 0;
}
