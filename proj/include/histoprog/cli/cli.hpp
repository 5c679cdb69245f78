#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "histoprog/common/config.hpp"
#include "histoprog/common/csv.hpp"
#include "histoprog/distill/distill.hpp"
#include "histoprog/meanteacher/meanteacher.hpp"
#include "histoprog/prognosis/model.hpp"
#include "histoprog/stainlab/macenko.hpp"
#include "histoprog/stainlab/style.hpp"
#include "histoprog/synthdata/synthdata.hpp"

namespace histoprog::cli {

using LogFn = std::function<void(const std::string&)>;

// ------------------------------------------------------------- run config

/// Every tunable of every stage, declared with its default.
KeyValueConfig default_run_config();

synthdata::CohortSpec cohort_spec(const KeyValueConfig& cfg);
synthdata::SlideSpec slide_spec(const KeyValueConfig& cfg, std::size_t index, synthdata::StainStyle style);
stainlab::MacenkoParams macenko_params(const KeyValueConfig& cfg);
stainlab::ClassifierConfig fhat_config(const KeyValueConfig& cfg);
stainlab::StyleConfig style_config(const KeyValueConfig& cfg);
meanteacher::MTConfig mt_config(const KeyValueConfig& cfg);
prognosis::PrognosisConfig prognosis_config(const KeyValueConfig& cfg);
distill::DistillConfig distill_config(const KeyValueConfig& cfg);

// --------------------------------------------------------------- pipeline

struct IndexSplit {
  std::vector<std::size_t> train, test;  // both ascending
};
/// Seeded split; the test side gets round(test_fraction * n) items.
IndexSplit split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

template <typename T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items.at(i));
  return out;
}

struct PatientSplit {
  std::vector<prognosis::PatientSample> train, test;
};

struct FractionReport {
  CsvTable per_seed;  // seed,fraction,patients,c_index
  CsvTable mean;      // fraction,mean_c_index,sd
  std::vector<double> fractions, means;
  double rho = 0;  // Spearman between fraction and mean c-index
};
/// One label-fraction curve per split (model seed derived from cfg.seed and
/// the split index), averaged across splits.
FractionReport label_fraction_report(const std::vector<PatientSplit>& splits, const prognosis::PrognosisConfig& cfg,
                                     const std::vector<double>& fractions = prognosis::kLabelFractions);

struct ClassScores {
  double accuracy = 0;
  double macro_f1 = 0;
  std::array<double, synthdata::kNumClasses> f1{};
};
ClassScores class_scores(const gradcore::Tensor& probs, const std::vector<meanteacher::PatchSample>& patches);

struct DistillSettings {
  std::size_t teacher_patches = 500;  // rendered labeled patches for the classifier teacher
  meanteacher::MTConfig teacher;
  prognosis::PrognosisConfig head;
  distill::DistillConfig student;
  std::size_t student_images = 2000;  // training-patient patches the student sees
  double test_fraction = 1.0 / 3.0;
  std::size_t bootstrap = 200;
  std::uint64_t seed = 0;
};
DistillSettings distill_settings(const KeyValueConfig& cfg);

struct DistillRun {
  meanteacher::MTModel teacher;
  prognosis::PrognosisModel head;  // trained on teacher outputs, applied to both
  distill::TinyVit student;
  CsvTable student_curve;
  IndexSplit split;
  double teacher_c = 0, student_c = 0;
  CsvTable comparison;  // as kd_comparison
};
/// Teacher classifier, prognosis head on its outputs, then the distilled
/// student scored through the same head on held-out patients.
DistillRun run_distillation(const synthdata::Cohort& cohort, const DistillSettings& s, const LogFn& log = {});

/// teacher / student rows with bootstrap intervals on the held-out patients.
CsvTable kd_comparison(const synthdata::Cohort& cohort, const meanteacher::MTModel& teacher,
                       const prognosis::PrognosisModel& head, const distill::TinyVit& student,
                       const IndexSplit& split, const DistillSettings& s);

// -------------------------------------------------------------------- run

/// Runs one command line (argv[0] is the program name). Exit codes: 0 ok,
/// 1 validation error, 2 runtime failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace histoprog::cli
