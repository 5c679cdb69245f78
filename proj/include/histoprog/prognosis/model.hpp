#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histoprog/common/csv.hpp"
#include "histoprog/gradcore/checkpoint.hpp"
#include "histoprog/gradcore/params.hpp"
#include "histoprog/prognosis/survival.hpp"
#include "histoprog/synthdata/synthdata.hpp"

namespace histoprog::prognosis {

using gradcore::ParamSet;

// Segment ops over consecutive row blocks; `offsets` holds every segment
// start plus the final end.
Var segment_sum_rows(const Var& a, std::span<const std::size_t> offsets);
/// Repeats row s of `a` over the rows of segment s.
Var expand_segments(const Var& a, std::span<const std::size_t> offsets);
/// Softmax of a {n,1} score column within each segment.
Var segment_softmax(const Var& scores, std::span<const std::size_t> offsets);

enum class Aggregation { max, mean, weighted };
std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

struct LesionFeature {
  std::vector<double> features;
  double volume = 1.0;
};

/// Lesion rows {L,d} to patient rows {P,d}. Weighted pooling normalizes the
/// volumes of each patient; mean pooling runs through the same arithmetic
/// with unit weights.
Var aggregate_lesion_rows(const Var& lesions, std::span<const std::size_t> offsets, std::span<const double> volumes,
                          Aggregation strategy);
std::vector<double> aggregate_lesions(const std::vector<LesionFeature>& lesions, Aggregation strategy);

inline constexpr std::size_t kAttentionWidth = 8;

/// Gated attention: score(v) = w . (tanh(V v + b) * sigmoid(U v + c)).
void init_attention(ParamSet& params, std::size_t dim, Rng& rng);
/// Scores {n,1} for patch rows {n,d}.
Var attention_scores(const ParamSet& params, const Var& patches);

struct AttentionPool {
  Var pooled;   // {1,d}
  Var weights;  // {n,1}
};
AttentionPool attention_pool(const ParamSet& params, const Var& patches);

enum class HeadKind { cox, discrete, trg };
std::string to_string(HeadKind h);
HeadKind head_from_string(const std::string& s);

/// TRG grades 1..5 split into contiguous groups, written like "1-2 vs 3-5".
struct TrgGrouping {
  std::string name;
  std::vector<int> group_of_grade;  // index grade-1

  std::size_t classes() const;
  int group(int trg) const;
};
TrgGrouping trg_grouping_from_string(const std::string& s);

struct PatientSample {
  std::string id;
  std::vector<Tensor> lesions;  // per lesion, patch features {n,d}
  std::vector<double> volumes;
  std::vector<double> clinical;
  SurvivalRecord record;
  int trg = 1;
};

void validate_patients(const std::vector<PatientSample>& patients);
std::vector<PatientSample> patients_from_cohort(const synthdata::Cohort& cohort);
std::vector<SurvivalRecord> records_of(const std::vector<PatientSample>& patients);

struct PrognosisConfig {
  HeadKind head = HeadKind::cox;
  Aggregation aggregation = Aggregation::weighted;
  bool attention = true;
  std::size_t hidden = 16;
  std::size_t intervals = 4;
  std::string trg_grouping = "1-2 vs 3-5";
  std::size_t epochs = 300;
  double lr = 0.2;
  double momentum = 0.9;
  std::size_t patience = 20;
  std::size_t min_epochs = 50;  // patience only counts after this many
  double val_fraction = 0.2;  // carved from the training set when no validation set is given
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;
};

struct PrognosisModel {
  ParamSet params;
  PrognosisConfig cfg;
  std::size_t feature_dim = 0, clinical_dim = 0;
  std::optional<TimeGrid> grid;
  std::optional<TrgGrouping> grouping;

  std::size_t outputs() const;
};

PrognosisModel init_prognosis(const PrognosisConfig& cfg, std::size_t feature_dim, std::size_t clinical_dim);

struct PatientPrediction {
  double risk = 0;                              // higher = worse; cox and discrete heads
  std::vector<double> probs;                    // discrete or trg heads
  int trg_class = -1;                           // trg head
  std::vector<std::vector<double>> attention;  // per lesion, per patch
};

/// Head output for a batch: {P,1} risks for cox, {P,k} probabilities otherwise.
Var forward(const PrognosisModel& model, const std::vector<PatientSample>& patients,
            std::vector<std::vector<std::vector<double>>>* attention = nullptr);
std::vector<PatientPrediction> predict(const PrognosisModel& model, const std::vector<PatientSample>& patients);
std::vector<double> predict_risks(const PrognosisModel& model, const std::vector<PatientSample>& patients);

struct TrgPrediction {
  int group = 0;
  std::vector<double> probs;
};
TrgPrediction predict_trg(const PrognosisModel& model, const PatientSample& patient, const std::string& grouping);

struct PrognosisResult {
  PrognosisModel model;
  CsvTable curve;  // epoch,loss,train_metric,val_metric
  std::size_t best_epoch = 0;
  std::size_t excluded = 0;  // censored in the last interval
  gradcore::Checkpoint checkpoint;
};

/// Full-batch training with early stopping on the validation metric
/// (c-index; validation likelihood for the trg head); the best epoch is kept.
PrognosisResult train_prognosis(const std::vector<PatientSample>& train, const PrognosisConfig& cfg,
                                const std::vector<PatientSample>& validation = {},
                                const std::function<void(const std::string&)>& log = {});

/// Held-out c-index, or accuracy for the trg head.
double evaluate_metric(const PrognosisModel& model, const std::vector<PatientSample>& patients);

gradcore::Checkpoint prognosis_checkpoint(const PrognosisModel& model);
PrognosisModel prognosis_from_checkpoint(const gradcore::Checkpoint& ckpt);

/// Seeded subset holding `fraction` of the patients (at least two).
std::vector<PatientSample> label_subset(const std::vector<PatientSample>& patients, double fraction,
                                        std::uint64_t seed);

inline const std::vector<double> kLabelFractions{0.125, 0.25, 0.375, 0.5, 0.75, 1.0};

struct FractionPoint {
  double fraction = 0;
  std::size_t patients = 0;
  double metric = 0;  // held-out c-index (accuracy for trg)
};
/// Retrains on nested-seed label subsets and scores each on `test`.
std::vector<FractionPoint> label_fraction_curve(const std::vector<PatientSample>& train,
                                                const std::vector<PatientSample>& test, const PrognosisConfig& cfg,
                                                const std::vector<double>& fractions = kLabelFractions);

}  // namespace histoprog::prognosis
