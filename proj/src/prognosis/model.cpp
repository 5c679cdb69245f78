#include "histoprog/prognosis/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/mlp.hpp"
#include "histoprog/gradcore/optim.hpp"

namespace histoprog::prognosis {

namespace gc = histoprog::gradcore;

namespace {

void check_offsets(std::span<const std::size_t> offsets, std::size_t rows, const char* op) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows) {
    throw ValidationError(std::string(op) + ": offsets must run from 0 to the row count");
  }
  for (std::size_t s = 1; s < offsets.size(); ++s) {
    if (offsets[s] <= offsets[s - 1]) throw ValidationError(std::string(op) + ": empty segment");
  }
}

}  // namespace

// ------------------------------------------------------------ segment ops

Var segment_sum_rows(const Var& a, std::span<const std::size_t> offsets) {
  const Tensor& x = a.value();
  check_offsets(offsets, x.rows(), "segment_sum_rows");
  const std::size_t segs = offsets.size() - 1, d = x.cols();
  Tensor out({segs, d}, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      for (std::size_t c = 0; c < d; ++c) out.at(s, c) += x.at(r, c);
    }
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return gc::make_op(
      std::move(out), {a},
      [off, d](gc::Node& self) {
        Tensor& g = self.parents[0].node()->grad_buffer();
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          for (std::size_t r = off[s]; r < off[s + 1]; ++r) {
            for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[s * d + c];
          }
        }
      },
      "segment_sum_rows");
}

Var expand_segments(const Var& a, std::span<const std::size_t> offsets) {
  const Tensor& x = a.value();
  if (x.rows() + 1 != offsets.size()) throw ValidationError("expand_segments: one row per segment required");
  check_offsets(offsets, offsets.back(), "expand_segments");
  const std::size_t d = x.cols(), n = offsets.back();
  Tensor out({n, d});
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      for (std::size_t c = 0; c < d; ++c) out.at(r, c) = x.at(s, c);
    }
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return gc::make_op(
      std::move(out), {a},
      [off, d](gc::Node& self) {
        Tensor& g = self.parents[0].node()->grad_buffer();
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          for (std::size_t r = off[s]; r < off[s + 1]; ++r) {
            for (std::size_t c = 0; c < d; ++c) g[s * d + c] += self.grad[r * d + c];
          }
        }
      },
      "expand_segments");
}

Var segment_softmax(const Var& scores, std::span<const std::size_t> offsets) {
  const Tensor& x = scores.value();
  if (x.cols() != 1) throw ValidationError("segment_softmax expects a score column");
  check_offsets(offsets, x.rows(), "segment_softmax");
  Tensor peak({offsets.size() - 1, 1});
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    peak[s] = *std::max_element(x.data().begin() + static_cast<std::ptrdiff_t>(offsets[s]),
                                x.data().begin() + static_cast<std::ptrdiff_t>(offsets[s + 1]));
  }
  Var e = gc::exp(gc::sub(scores, expand_segments(gc::constant(peak), offsets)));
  return gc::div(e, expand_segments(segment_sum_rows(e, offsets), offsets));
}

// ------------------------------------------------------------ aggregation

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::max: return "max";
    case Aggregation::mean: return "mean";
    case Aggregation::weighted: return "weighted";
  }
  return "?";
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "max") return Aggregation::max;
  if (s == "mean") return Aggregation::mean;
  if (s == "weighted") return Aggregation::weighted;
  throw ValidationError("unknown aggregation '" + s + "' (expected max, mean or weighted)");
}

Var aggregate_lesion_rows(const Var& lesions, std::span<const std::size_t> offsets, std::span<const double> volumes,
                          Aggregation strategy) {
  const std::size_t n = lesions.value().rows();
  if (n == 0) throw ValidationError("aggregation needs at least one lesion");
  check_offsets(offsets, n, "aggregate_lesions");
  if (strategy == Aggregation::max) return gc::segment_max_rows(lesions, offsets);
  if (strategy == Aggregation::weighted && volumes.size() != n) {
    throw ValidationError("aggregate_lesions: one volume per lesion required");
  }
  const std::size_t segs = offsets.size() - 1;
  Tensor u({n, 1}, 1.0), den({segs, 1}, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    double vmax = 0;
    if (strategy == Aggregation::weighted) {
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
        if (!(volumes[r] > 0) || !std::isfinite(volumes[r])) throw ValidationError("lesion volume must be positive");
        vmax = std::max(vmax, volumes[r]);
      }
    }
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      if (strategy == Aggregation::weighted) u[r] = volumes[r] / vmax;
      den[s] += u[r];
    }
  }
  return gc::div(segment_sum_rows(gc::mul(lesions, gc::constant(u)), offsets), gc::constant(den));
}

std::vector<double> aggregate_lesions(const std::vector<LesionFeature>& lesions, Aggregation strategy) {
  if (lesions.empty()) throw ValidationError("aggregation needs at least one lesion");
  const std::size_t d = lesions.front().features.size();
  Tensor rows({lesions.size(), d});
  std::vector<double> volumes;
  for (std::size_t l = 0; l < lesions.size(); ++l) {
    if (lesions[l].features.size() != d) throw ValidationError("lesion feature dimensions differ");
    for (std::size_t c = 0; c < d; ++c) rows.at(l, c) = lesions[l].features[c];
    volumes.push_back(lesions[l].volume);
  }
  const std::size_t offsets[] = {0, lesions.size()};
  const Tensor out = aggregate_lesion_rows(gc::constant(rows), offsets, volumes, strategy).value();
  return {out.data().begin(), out.data().end()};
}

// -------------------------------------------------------------- attention

void init_attention(ParamSet& params, std::size_t dim, Rng& rng) {
  params.add("attn.V.weight", gc::glorot_uniform(dim, kAttentionWidth, rng));
  params.add("attn.V.bias", Tensor({kAttentionWidth}, 0.0));
  params.add("attn.U.weight", gc::glorot_uniform(dim, kAttentionWidth, rng));
  params.add("attn.U.bias", Tensor({kAttentionWidth}, 0.0));
  params.add("attn.w.weight", Tensor({kAttentionWidth, 1}, 0.0));  // starts as average pooling
}

Var attention_scores(const ParamSet& params, const Var& patches) {
  const std::size_t d = params.at("attn.V.weight").value().shape()[0];
  if (patches.value().rank() != 2 || patches.value().cols() != d) {
    throw ValidationError("attention: expected patch rows of width " + std::to_string(d) + ", got " +
                          gc::shape_string(patches.shape()));
  }
  Var v = gc::tanh(gc::add(gc::matmul(patches, params.at("attn.V.weight")), params.at("attn.V.bias")));
  Var u = gc::sigmoid(gc::add(gc::matmul(patches, params.at("attn.U.weight")), params.at("attn.U.bias")));
  return gc::matmul(gc::mul(v, u), params.at("attn.w.weight"));
}

AttentionPool attention_pool(const ParamSet& params, const Var& patches) {
  const std::size_t n = patches.value().rows();
  if (n == 0) throw ValidationError("attention pooling needs at least one patch");
  const std::size_t offsets[] = {0, n};
  Var w = segment_softmax(attention_scores(params, patches), offsets);
  return {segment_sum_rows(gc::mul(patches, w), offsets), w};
}

// ------------------------------------------------------------------ heads

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::cox: return "cox";
    case HeadKind::discrete: return "discrete";
    case HeadKind::trg: return "trg";
  }
  return "?";
}

HeadKind head_from_string(const std::string& s) {
  if (s == "cox") return HeadKind::cox;
  if (s == "discrete") return HeadKind::discrete;
  if (s == "trg") return HeadKind::trg;
  throw ValidationError("unknown head '" + s + "' (expected cox, discrete or trg)");
}

std::size_t TrgGrouping::classes() const {
  return group_of_grade.empty() ? 0 : static_cast<std::size_t>(group_of_grade.back()) + 1;
}

int TrgGrouping::group(int trg) const {
  if (trg < 1 || trg > 5) throw ValidationError("TRG grade must be in 1..5");
  return group_of_grade[static_cast<std::size_t>(trg - 1)];
}

TrgGrouping trg_grouping_from_string(const std::string& s) {
  TrgGrouping g;
  std::vector<std::string> parts;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t next = s.find(" vs ", pos);
    parts.push_back(s.substr(pos, next - pos));
    if (next == std::string::npos) break;
    pos = next + 4;
  }
  const auto bad = [&] { return ValidationError("bad TRG grouping '" + s + "' (e.g. \"1-2 vs 3-5\")"); };
  if (parts.size() < 2) throw bad();
  int expect = 1;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    int lo = 0, hi = 0;
    char dash = 0;
    std::istringstream in(parts[k]);
    if (!(in >> lo)) throw bad();
    if (in >> dash) {
      if (dash != '-' || !(in >> hi)) throw bad();
    } else {
      hi = lo;
    }
    if (lo != expect || hi < lo || hi > 5) throw bad();
    for (int t = lo; t <= hi; ++t) g.group_of_grade.push_back(static_cast<int>(k));
    expect = hi + 1;
  }
  if (expect != 6) throw bad();
  g.name = s;
  return g;
}

// --------------------------------------------------------------- patients

void validate_patients(const std::vector<PatientSample>& patients) {
  if (patients.empty()) throw ValidationError("no patients");
  const std::size_t d = patients.front().lesions.empty() ? 0 : patients.front().lesions.front().cols();
  const std::size_t c = patients.front().clinical.size();
  for (const auto& p : patients) {
    if (p.lesions.empty()) throw ValidationError("patient " + p.id + " has no lesions");
    if (p.volumes.size() != p.lesions.size()) throw ValidationError("patient " + p.id + ": one volume per lesion");
    if (p.clinical.size() != c) throw ValidationError("patient " + p.id + ": clinical covariate count differs");
    for (std::size_t l = 0; l < p.lesions.size(); ++l) {
      const Tensor& t = p.lesions[l];
      if (t.rank() != 2 || t.rows() == 0 || t.cols() != d) {
        throw ValidationError("patient " + p.id + ": lesion features must be {n," + std::to_string(d) + "}");
      }
      if (!t.all_finite()) throw ValidationError("patient " + p.id + ": non-finite lesion feature");
      if (!(p.volumes[l] > 0) || !std::isfinite(p.volumes[l])) {
        throw ValidationError("patient " + p.id + ": lesion volume must be positive");
      }
    }
  }
  validate_records(records_of(patients));
}

std::vector<PatientSample> patients_from_cohort(const synthdata::Cohort& cohort) {
  const Endpoint ep = endpoint_from_string(cohort.spec.endpoint);
  std::vector<PatientSample> out;
  for (const auto& p : cohort.patients) {
    PatientSample s;
    s.id = p.id;
    for (const auto& les : p.lesions) {
      Tensor t({les.patch_features.size(), synthdata::kNumClasses});
      for (std::size_t i = 0; i < les.patch_features.size(); ++i) {
        for (std::size_t k = 0; k < synthdata::kNumClasses; ++k) t.at(i, k) = les.patch_features[i][k];
      }
      s.lesions.push_back(std::move(t));
      s.volumes.push_back(les.volume);
    }
    s.clinical.assign(p.clinical.begin(), p.clinical.end());
    s.record = {p.id, p.time, p.event, ep};
    s.trg = p.trg;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SurvivalRecord> records_of(const std::vector<PatientSample>& patients) {
  std::vector<SurvivalRecord> r;
  r.reserve(patients.size());
  for (const auto& p : patients) r.push_back(p.record);
  return r;
}

// ------------------------------------------------------------------ model

namespace {

gc::MlpSpec head_spec(const PrognosisModel& m) {
  return {"head", {m.feature_dim + m.clinical_dim, m.cfg.hidden, m.outputs()},
          {gc::Activation::relu, gc::Activation::identity}};
}

struct Packed {
  Tensor patches, clinical;
  std::vector<std::size_t> patch_offsets{0}, lesion_offsets{0};
  std::vector<double> volumes;
};

Packed pack(const std::vector<PatientSample>& patients, std::size_t d, std::size_t c) {
  Packed pk;
  std::size_t rows = 0;
  for (const auto& p : patients) {
    for (const auto& l : p.lesions) rows += l.rows();
  }
  pk.patches = Tensor({rows, d});
  pk.clinical = Tensor({patients.size(), std::max<std::size_t>(c, 1)}, 0.0);
  std::size_t r = 0;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const auto& p = patients[i];
    if (p.clinical.size() != c) throw ValidationError("patient " + p.id + ": expected " + std::to_string(c) + " clinical covariates");
    for (std::size_t k = 0; k < c; ++k) pk.clinical.at(i, k) = p.clinical[k];
    for (std::size_t l = 0; l < p.lesions.size(); ++l) {
      const Tensor& t = p.lesions[l];
      if (t.cols() != d) throw ValidationError("patient " + p.id + ": expected feature width " + std::to_string(d));
      std::copy(t.data().begin(), t.data().end(), pk.patches.data().begin() + static_cast<std::ptrdiff_t>(r * d));
      r += t.rows();
      pk.patch_offsets.push_back(r);
      pk.volumes.push_back(p.volumes[l]);
    }
    pk.lesion_offsets.push_back(pk.patch_offsets.size() - 1);
  }
  return pk;
}

// Cox: {P,1} risks; others: {P,k} logits.
Var head_output(const PrognosisModel& m, const std::vector<PatientSample>& patients,
                std::vector<std::vector<std::vector<double>>>* attention) {
  if (patients.empty()) throw ValidationError("no patients");
  for (const auto& p : patients) {
    if (p.lesions.empty()) throw ValidationError("patient " + p.id + " has no lesions");
  }
  const Packed pk = pack(patients, m.feature_dim, m.clinical_dim);
  Var patches = gc::constant(pk.patches);
  Var lesions;
  if (m.cfg.attention) {
    Var w = segment_softmax(attention_scores(m.params, patches), pk.patch_offsets);
    lesions = segment_sum_rows(gc::mul(patches, w), pk.patch_offsets);
    if (attention) {
      attention->assign(patients.size(), {});
      std::size_t l = 0;
      for (std::size_t i = 0; i < patients.size(); ++i) {
        for (; l < pk.lesion_offsets[i + 1]; ++l) {
          (*attention)[i].emplace_back(w.value().data().begin() + static_cast<std::ptrdiff_t>(pk.patch_offsets[l]),
                                       w.value().data().begin() + static_cast<std::ptrdiff_t>(pk.patch_offsets[l + 1]));
        }
      }
    }
  } else {
    lesions = aggregate_lesion_rows(patches, pk.patch_offsets, {}, Aggregation::mean);
  }
  Var x = aggregate_lesion_rows(lesions, pk.lesion_offsets, pk.volumes, m.cfg.aggregation);
  if (m.clinical_dim > 0) {
    const Var parts[] = {x, gc::constant(pk.clinical)};
    x = gc::concat_cols(parts);
  }
  return gc::mlp_forward(m.params, x, head_spec(m));
}

}  // namespace

std::size_t PrognosisModel::outputs() const {
  switch (cfg.head) {
    case HeadKind::cox: return 1;
    case HeadKind::discrete: return cfg.intervals;
    case HeadKind::trg: return grouping ? grouping->classes() : trg_grouping_from_string(cfg.trg_grouping).classes();
  }
  return 0;
}

PrognosisModel init_prognosis(const PrognosisConfig& cfg, std::size_t feature_dim, std::size_t clinical_dim) {
  if (feature_dim == 0) throw ValidationError("feature dimension must be positive");
  if (cfg.hidden == 0) throw ValidationError("hidden width must be positive");
  if (cfg.head == HeadKind::discrete && cfg.intervals < 2) throw ValidationError("discrete head needs >= 2 intervals");
  PrognosisModel m;
  m.cfg = cfg;
  m.feature_dim = feature_dim;
  m.clinical_dim = clinical_dim;
  if (cfg.head == HeadKind::trg) m.grouping = trg_grouping_from_string(cfg.trg_grouping);
  Rng rng(derive_seed(cfg.seed, 61));
  if (cfg.attention) init_attention(m.params, feature_dim, rng);
  gc::init_mlp(m.params, head_spec(m), rng);
  return m;
}

Var forward(const PrognosisModel& model, const std::vector<PatientSample>& patients,
            std::vector<std::vector<std::vector<double>>>* attention) {
  Var out = head_output(model, patients, attention);
  return model.cfg.head == HeadKind::cox ? out : gc::softmax_rows(out);
}

std::vector<PatientPrediction> predict(const PrognosisModel& model, const std::vector<PatientSample>& patients) {
  std::vector<std::vector<std::vector<double>>> attention;
  const Tensor out = forward(model, patients, &attention).value();
  std::vector<PatientPrediction> preds(patients.size());
  std::vector<double> risks;
  if (model.cfg.head == HeadKind::discrete) risks = risk_scores(out, *model.grid);
  for (std::size_t i = 0; i < patients.size(); ++i) {
    auto& p = preds[i];
    if (model.cfg.attention) p.attention = std::move(attention[i]);
    if (model.cfg.head == HeadKind::cox) {
      p.risk = out[i];
      continue;
    }
    p.probs.assign(out.data().begin() + static_cast<std::ptrdiff_t>(i * out.cols()),
                   out.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * out.cols()));
    if (model.cfg.head == HeadKind::discrete) {
      p.risk = risks[i];
    } else {
      p.trg_class = static_cast<int>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
    }
  }
  return preds;
}

std::vector<double> predict_risks(const PrognosisModel& model, const std::vector<PatientSample>& patients) {
  if (model.cfg.head == HeadKind::trg) throw ValidationError("trg head has no risk score");
  std::vector<double> r;
  for (const auto& p : predict(model, patients)) r.push_back(p.risk);
  return r;
}

TrgPrediction predict_trg(const PrognosisModel& model, const PatientSample& patient, const std::string& grouping) {
  if (model.cfg.head != HeadKind::trg || !model.grouping) throw ValidationError("model head is not trg");
  if (trg_grouping_from_string(grouping).group_of_grade != model.grouping->group_of_grade) {
    throw ValidationError("grouping '" + grouping + "' does not match the model's '" + model.grouping->name + "'");
  }
  const auto p = predict(model, {patient}).front();
  return {p.trg_class, p.probs};
}

double evaluate_metric(const PrognosisModel& model, const std::vector<PatientSample>& patients) {
  if (model.cfg.head == HeadKind::trg) {
    const auto preds = predict(model, patients);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < patients.size(); ++i) {
      if (preds[i].trg_class == model.grouping->group(patients[i].trg)) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(patients.size());
  }
  return concordance_index(predict_risks(model, patients), records_of(patients));
}

// ----------------------------------------------------------- checkpoints

gc::Checkpoint prognosis_checkpoint(const PrognosisModel& m) {
  gc::Checkpoint c;
  c.seed = m.cfg.seed;
  c.metadata = {{"kind", "prognosis"},
                {"head", to_string(m.cfg.head)},
                {"aggregation", to_string(m.cfg.aggregation)},
                {"attention", m.cfg.attention ? "1" : "0"},
                {"hidden", std::to_string(m.cfg.hidden)},
                {"intervals", std::to_string(m.cfg.intervals)},
                {"trg_grouping", m.cfg.trg_grouping},
                {"feature_dim", std::to_string(m.feature_dim)},
                {"clinical_dim", std::to_string(m.clinical_dim)}};
  if (m.grid) {
    std::string b;
    for (double t : m.grid->bounds) b += (b.empty() ? "" : ",") + fmt(t, 17);
    c.metadata["grid"] = b;
  }
  c.tensors = m.params.snapshot();
  return c;
}

PrognosisModel prognosis_from_checkpoint(const gc::Checkpoint& ckpt) {
  if (ckpt.metadata.count("kind") == 0 || ckpt.meta("kind") != "prognosis") {
    throw ValidationError("checkpoint is not a prognosis model");
  }
  PrognosisConfig cfg;
  cfg.seed = ckpt.seed;
  cfg.head = head_from_string(ckpt.meta("head"));
  cfg.aggregation = aggregation_from_string(ckpt.meta("aggregation"));
  cfg.attention = ckpt.meta("attention") == "1";
  cfg.hidden = std::stoul(ckpt.meta("hidden"));
  cfg.intervals = std::stoul(ckpt.meta("intervals"));
  cfg.trg_grouping = ckpt.meta("trg_grouping");
  PrognosisModel m = init_prognosis(cfg, std::stoul(ckpt.meta("feature_dim")), std::stoul(ckpt.meta("clinical_dim")));
  m.params.load(ckpt.tensors);
  if (ckpt.metadata.count("grid")) {
    std::vector<double> b;
    std::istringstream in(ckpt.meta("grid"));
    for (std::string tok; std::getline(in, tok, ',');) b.push_back(std::stod(tok));
    m.grid = time_grid_from_bounds(std::move(b));
  }
  return m;
}

// --------------------------------------------------------------- training

std::vector<PatientSample> label_subset(const std::vector<PatientSample>& patients, double fraction,
                                        std::uint64_t seed) {
  if (!(fraction > 0) || fraction > 1) throw ValidationError("label fraction must be in (0, 1]");
  std::vector<std::size_t> idx(patients.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  shuffle(idx, rng);
  const auto k = std::min(patients.size(),
                          std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(patients.size())))));
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<PatientSample> out;
  for (std::size_t i : idx) out.push_back(patients[i]);
  return out;
}

namespace {

double safe_metric(const PrognosisModel& m, const std::vector<PatientSample>& p) {
  if (p.empty()) return std::nan("");
  try {
    return evaluate_metric(m, p);
  } catch (const ValidationError&) {
    return std::nan("");  // e.g. no comparable pairs
  }
}

Tensor trg_targets(const PrognosisModel& m, const std::vector<PatientSample>& patients) {
  Tensor t({patients.size(), m.outputs()}, 0.0);
  for (std::size_t i = 0; i < patients.size(); ++i) t.at(i, static_cast<std::size_t>(m.grouping->group(patients[i].trg))) = 1.0;
  return t;
}

Var trg_loss(const Var& logits, const Tensor& targets) {
  return gc::scale(gc::sum(gc::mul(gc::log_softmax_rows(logits), gc::constant(targets))),
                   -1.0 / static_cast<double>(targets.rows()));
}

}  // namespace

PrognosisResult train_prognosis(const std::vector<PatientSample>& train_in, const PrognosisConfig& cfg,
                                const std::vector<PatientSample>& validation_in,
                                const std::function<void(const std::string&)>& log) {
  validate_patients(train_in);
  if (cfg.epochs == 0) throw ValidationError("epochs must be positive");
  std::vector<PatientSample> train = train_in, val = validation_in;
  if (val.empty() && cfg.val_fraction > 0 && train.size() >= 10) {
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(cfg.seed, 62));
    shuffle(idx, rng);
    const auto nv = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(train.size())));
    std::vector<bool> is_val(train.size(), false);
    for (std::size_t i = 0; i < nv; ++i) is_val[idx[i]] = true;
    std::vector<PatientSample> tr;
    for (std::size_t i = 0; i < train_in.size(); ++i) (is_val[i] ? val : tr).push_back(train_in[i]);
    train = std::move(tr);
  }
  if (!val.empty()) validate_patients(val);
  const auto records = records_of(train);
  const auto events = static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const SurvivalRecord& r) { return r.event; }));
  if (cfg.head != HeadKind::trg && events == 0) {
    throw ValidationError("degenerate training set: every patient is censored");
  }
  const std::size_t d = train.front().lesions.front().cols();
  PrognosisResult res;
  PrognosisModel& m = res.model;
  m = init_prognosis(cfg, d, train.front().clinical.size());
  if (cfg.head == HeadKind::discrete) m.grid = make_time_grid(records, cfg.intervals);
  Tensor targets, val_targets;
  if (cfg.head == HeadKind::trg) {
    targets = trg_targets(m, train);
    if (!val.empty()) val_targets = trg_targets(m, val);
  }

  gc::OptimState opt{cfg.lr, cfg.momentum, 0.0, {}};
  res.curve.header = {"epoch", "loss", "train_metric", "val_metric"};
  double best = -1;
  std::vector<gc::NamedTensor> best_params = m.params.snapshot();
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const gc::Checkpoint stable = prognosis_checkpoint(m);
    m.params.zero_grad();
    Var out = head_output(m, train, nullptr);
    Var loss;
    switch (cfg.head) {
      case HeadKind::cox:
        loss = gc::scale(cox_pl_loss(out, records), 1.0 / static_cast<double>(events));
        break;
      case HeadKind::discrete: {
        auto ce = censored_ce_loss(gc::softmax_rows(out), records, *m.grid);
        loss = ce.loss;
        res.excluded = ce.excluded;
        break;
      }
      case HeadKind::trg:
        loss = trg_loss(out, targets);
        break;
    }
    const double lv = loss.value()[0];
    if (!std::isfinite(lv) || std::abs(lv) > cfg.divergence_threshold) {
      auto ck = stable;
      ck.metadata["epoch"] = std::to_string(e - 1);
      throw gc::DivergenceError("prognosis training diverged at epoch " + std::to_string(e), ck);
    }
    gc::backward(loss);
    gc::sgd_momentum_step(m.params, opt);

    const double tm = safe_metric(m, train), vm = safe_metric(m, val);
    res.curve.add_row({std::to_string(e), fmt(lv), fmt(tm), fmt(vm)});
    if (log) log("epoch " + std::to_string(e) + " loss " + fmt(lv) + " train " + fmt(tm) + " val " + fmt(vm));
    // Accuracy plateaus, so the trg head stops on validation likelihood.
    double score = std::isnan(vm) ? tm : vm;
    if (cfg.head == HeadKind::trg) {
      score = val.empty() ? -lv : -trg_loss(head_output(m, val, nullptr), val_targets).value()[0];
    }
    if (!std::isnan(score) && score > best) {
      best = score;
      res.best_epoch = e;
      best_params = m.params.snapshot();
    } else if (res.best_epoch > 0 && e >= cfg.min_epochs && e - res.best_epoch >= cfg.patience) {
      break;
    }
  }
  m.params.load(best_params);
  res.checkpoint = prognosis_checkpoint(m);
  res.checkpoint.optim = gc::snapshot_optim(opt, m.params);
  return res;
}

std::vector<FractionPoint> label_fraction_curve(const std::vector<PatientSample>& train,
                                                const std::vector<PatientSample>& test, const PrognosisConfig& cfg,
                                                const std::vector<double>& fractions) {
  std::vector<FractionPoint> out;
  for (double f : fractions) {
    const auto subset = label_subset(train, f, derive_seed(cfg.seed, 63));
    const auto res = train_prognosis(subset, cfg);
    out.push_back({f, subset.size(), evaluate_metric(res.model, test)});
  }
  return out;
}

}  // namespace histoprog::prognosis
