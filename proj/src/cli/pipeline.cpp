#include <algorithm>
#include <cmath>
#include <numeric>

#include "histoprog/cli/cli.hpp"
#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/var.hpp"

namespace histoprog::cli {

namespace gc = histoprog::gradcore;
namespace pg = histoprog::prognosis;

IndexSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= n) {
    throw ValidationError("split of " + std::to_string(n) + " items at test fraction " + fmt(test_fraction) +
                          " leaves an empty side");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  shuffle(perm, rng);
  IndexSplit s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

FractionReport label_fraction_report(const std::vector<PatientSplit>& splits, const pg::PrognosisConfig& cfg,
                                     const std::vector<double>& fractions) {
  if (splits.empty()) throw ValidationError("label-fraction report needs at least one split");
  FractionReport r;
  r.per_seed.header = {"seed", "fraction", "patients", "c_index"};
  r.mean.header = {"fraction", "mean_c_index", "sd"};
  r.fractions = fractions;
  std::vector<std::vector<double>> values(fractions.size());
  for (std::size_t s = 0; s < splits.size(); ++s) {
    pg::PrognosisConfig c = cfg;
    c.seed = derive_seed(cfg.seed, s);
    const auto curve = pg::label_fraction_curve(splits[s].train, splits[s].test, c, fractions);
    for (std::size_t k = 0; k < curve.size(); ++k) {
      r.per_seed.add_row({std::to_string(s), fmt(curve[k].fraction, 4), std::to_string(curve[k].patients),
                          fmt(curve[k].metric)});
      values[k].push_back(curve[k].metric);
    }
  }
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double n = static_cast<double>(values[k].size());
    const double mean = std::accumulate(values[k].begin(), values[k].end(), 0.0) / n;
    double ss = 0;
    for (double v : values[k]) ss += (v - mean) * (v - mean);
    r.means.push_back(mean);
    r.mean.add_row({fmt(fractions[k], 4), fmt(mean), fmt(n > 1 ? std::sqrt(ss / (n - 1)) : 0.0)});
  }
  r.rho = pg::spearman(r.fractions, r.means);
  return r;
}

ClassScores class_scores(const gc::Tensor& probs, const std::vector<meanteacher::PatchSample>& patches) {
  constexpr std::size_t k = synthdata::kNumClasses;
  if (probs.rank() != 2 || probs.rows() != patches.size() || probs.cols() != k) {
    throw ValidationError("class scores: prediction shape " + gc::shape_string(probs.shape()) + " does not match " +
                          std::to_string(patches.size()) + " patches");
  }
  std::array<std::size_t, k> tp{}, fp{}, fn{};
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (!patches[i].label) continue;
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (probs.at(i, c) > probs.at(i, best)) best = c;
    }
    const auto truth = static_cast<std::size_t>(*patches[i].label);
    ++n;
    if (best == truth) {
      ++hit;
      ++tp[truth];
    } else {
      ++fp[best];
      ++fn[truth];
    }
  }
  if (n == 0) throw ValidationError("class scores need labeled patches");
  ClassScores s;
  s.accuracy = static_cast<double>(hit) / static_cast<double>(n);
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t den = 2 * tp[c] + fp[c] + fn[c];
    if (den == 0) {
      s.f1[c] = std::nan("");
      continue;
    }
    s.f1[c] = 2.0 * static_cast<double>(tp[c]) / static_cast<double>(den);
    sum += s.f1[c];
    ++present;
  }
  s.macro_f1 = sum / static_cast<double>(present);
  return s;
}

namespace {

std::vector<int> cohort_patch_labels(const synthdata::Cohort& cohort) {
  std::vector<int> labels;
  for (const auto& p : cohort.patients) {
    for (const auto& l : p.lesions) {
      for (auto c : l.patch_classes) labels.push_back(c);
    }
  }
  return labels;
}

// First image row of every patient, plus the total.
std::vector<std::size_t> patient_offsets(const synthdata::Cohort& cohort) {
  std::vector<std::size_t> off{0};
  for (const auto& p : cohort.patients) {
    std::size_t n = 0;
    for (const auto& l : p.lesions) n += l.patch_classes.size();
    off.push_back(off.back() + n);
  }
  return off;
}

gc::Tensor softmax_of(const gc::Tensor& logits) { return gc::softmax_rows(gc::constant(logits)).value(); }

pg::CIndexCi scored(const pg::PrognosisModel& head, const std::vector<pg::PatientSample>& test,
                    const DistillSettings& s, std::uint64_t stream) {
  return pg::bootstrap_cindex(pg::predict_risks(head, test), pg::records_of(test), s.bootstrap,
                              derive_seed(s.seed, stream));
}

CsvTable comparison_from_images(const synthdata::Cohort& cohort, const std::vector<RasterImage>& images,
                                const meanteacher::MTModel& teacher, const pg::PrognosisModel& head,
                                const distill::TinyVit& student, const IndexSplit& split, const DistillSettings& s) {
  const auto teacher_probs = softmax_of(distill::mt_teacher_outputs(teacher, images).logits);
  const auto t_test = select(distill::patients_with_features(cohort, teacher_probs), split.test);
  const auto s_test = select(distill::patients_with_features(cohort, distill::student_probs(student, images)), split.test);
  const std::string agg = pg::to_string(head.cfg.aggregation);
  return distill::comparison_csv({{"mean-teacher-mlp", agg, cohort.spec.endpoint, scored(head, t_test, s, 5)},
                                  {"tinyvit-kd", agg, cohort.spec.endpoint, scored(head, s_test, s, 6)}});
}

}  // namespace

DistillRun run_distillation(const synthdata::Cohort& cohort, const DistillSettings& s, const LogFn& log) {
  DistillRun run;
  std::vector<meanteacher::PatchSample> labeled;
  for (std::size_t i = 0; i < s.teacher_patches; ++i) {
    const std::size_t cls = i % synthdata::kNumClasses;
    labeled.push_back({distill::render_class_patch(cls, derive_seed(derive_seed(s.seed, 1), i)),
                       static_cast<int>(cls), "rendered", i, 0});
  }
  run.teacher = meanteacher::train_mean_teacher(labeled, {}, s.teacher, {}, log).model;

  const auto images = distill::render_cohort_patches(cohort, derive_seed(s.seed, 2));
  const auto labels = cohort_patch_labels(cohort);
  const auto tout = distill::mt_teacher_outputs(run.teacher, images);
  const auto patients = distill::patients_with_features(cohort, softmax_of(tout.logits));
  run.split = split_indices(patients.size(), s.test_fraction, derive_seed(s.seed, 3));
  run.head = pg::train_prognosis(select(patients, run.split.train), s.head, {}, log).model;
  run.teacher_c = pg::evaluate_metric(run.head, select(patients, run.split.test));
  if (log) log("teacher held-out c-index " + fmt(run.teacher_c, 4));

  const auto off = patient_offsets(cohort);
  std::vector<std::size_t> rows;
  for (std::size_t p : run.split.train) {
    for (std::size_t r = off[p]; r < off[p + 1] && rows.size() < s.student_images; ++r) rows.push_back(r);
  }
  const std::size_t n = rows.size(), dl = tout.logits.cols(), df = tout.features.cols();
  std::vector<RasterImage> student_images;
  std::vector<int> student_labels;
  distill::TeacherOutputs sub{gc::Tensor({n, dl}), gc::Tensor({n, df})};
  for (std::size_t i = 0; i < n; ++i) {
    student_images.push_back(images[rows[i]]);
    student_labels.push_back(labels[rows[i]]);
    std::copy_n(&tout.logits.at(rows[i], 0), dl, &sub.logits.at(i, 0));
    std::copy_n(&tout.features.at(rows[i], 0), df, &sub.features.at(i, 0));
  }
  auto trained = distill::train_distilled(student_images, student_labels, sub, s.student, log);
  run.student = std::move(trained.student);
  run.student_curve = std::move(trained.curve);

  run.comparison = comparison_from_images(cohort, images, run.teacher, run.head, run.student, run.split, s);
  const auto s_patients = distill::patients_with_features(cohort, distill::student_probs(run.student, images));
  run.student_c = pg::evaluate_metric(run.head, select(s_patients, run.split.test));
  if (log) log("student held-out c-index " + fmt(run.student_c, 4));
  return run;
}

CsvTable kd_comparison(const synthdata::Cohort& cohort, const meanteacher::MTModel& teacher,
                       const pg::PrognosisModel& head, const distill::TinyVit& student, const IndexSplit& split,
                       const DistillSettings& s) {
  const auto images = distill::render_cohort_patches(cohort, derive_seed(s.seed, 2));
  return comparison_from_images(cohort, images, teacher, head, student, split, s);
}

}  // namespace histoprog::cli
