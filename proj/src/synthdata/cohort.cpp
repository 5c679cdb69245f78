#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "histoprog/common/csv.hpp"
#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/rng.hpp"
#include "histoprog/synthdata/synthdata.hpp"
#include "json.hpp"

namespace histoprog::synthdata {

using nlohmann::json;

namespace {

double open_uniform(Rng& rng) {
  double u = 0.0;
  while (u <= 0.0) u = uniform(rng);
  return u;
}

std::size_t draw_categorical(const double* w, std::size_t n, Rng& rng) {
  const double total = std::accumulate(w, w + n, 0.0);
  double u = uniform(rng, 0.0, total);
  for (std::size_t k = 0; k < n; ++k) {
    if (u < w[k]) return k;
    u -= w[k];
  }
  for (std::size_t k = n; k-- > 0;) {
    if (w[k] > 0) return k;
  }
  return 0;
}

void standardize(std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  const double sd = std::sqrt(var / n);
  for (double& x : v) x = sd > 0 ? (x - m) / sd : 0.0;
}

}  // namespace

void CohortSpec::validate() const {
  if (n_patients < 2) throw ValidationError("cohort needs at least 2 patients");
  if (!beta.empty() && beta.size() != kNumCovariates) {
    throw ValidationError("beta must have " + std::to_string(kNumCovariates) + " coefficients");
  }
  if (!(baseline_hazard > 0)) throw ValidationError("baseline_hazard must be positive");
  if (endpoint != "OS" && endpoint != "TTR") throw ValidationError("endpoint must be OS or TTR");
  double s = 0;
  for (double w : grade_weights) {
    if (w < 0) throw ValidationError("grade weights must be nonnegative");
    s += w;
  }
  if (s <= 0) throw ValidationError("grade weights must not all be zero");
  if (feature_noise < 0) throw ValidationError("feature_noise must be nonnegative");
}

std::vector<double> strong_beta() { return {-2.0, -3.0, 6.0, 2.0, 0.0, 1.0, 0.8}; }

double Cohort::censored_fraction() const {
  std::size_t c = 0;
  for (const auto& p : patients) c += p.event ? 0 : 1;
  return static_cast<double>(c) / static_cast<double>(patients.size());
}

Cohort gen_cohort(const CohortSpec& spec) {
  spec.validate();
  Cohort cohort;
  cohort.spec = spec;
  std::vector<double> beta = spec.beta.empty() ? std::vector<double>(kNumCovariates, 0.0) : spec.beta;
  Rng rng(derive_seed(spec.seed, 11));

  std::vector<double> ages, counts;
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    Patient p;
    char id[16];
    std::snprintf(id, sizeof(id), "P%04zu", i + 1);
    p.id = id;
    p.trg = static_cast<int>(draw_categorical(spec.grade_weights.data(), 5, rng)) + 1;
    const Composition base = grade_composition(p.trg);
    const std::size_t n_lesions = 1 + uniform_index(rng, 4);
    double vol_total = 0;
    for (std::size_t l = 0; l < n_lesions; ++l) {
      Lesion les;
      les.volume = std::exp(normal(rng, 0.0, 0.5));
      double s = 0;
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        les.composition[k] = base[k] * std::exp(normal(rng, 0.0, 0.5));
        s += les.composition[k];
      }
      for (auto& f : les.composition) f /= s;
      Composition frac{};
      for (std::size_t j = 0; j < kPatchesPerLesion; ++j) {
        const auto cls = draw_categorical(les.composition.data(), kNumClasses, rng);
        les.patch_classes.push_back(static_cast<std::uint8_t>(cls));
        std::array<double, kNumClasses> logits{};
        double mx = -INFINITY;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          logits[k] = (k == cls ? 3.0 : 0.0) + normal(rng, 0.0, spec.feature_noise);
          mx = std::max(mx, logits[k]);
        }
        double z = 0;
        for (auto& v : logits) z += (v = std::exp(v - mx));
        for (auto& v : logits) v /= z;
        les.patch_features.push_back(logits);
        frac[cls] += 1.0 / kPatchesPerLesion;
      }
      for (std::size_t k = 0; k < kNumClasses; ++k) p.realized[k] += les.volume * frac[k];
      vol_total += les.volume;
      p.lesions.push_back(std::move(les));
    }
    for (auto& f : p.realized) f /= vol_total;
    p.age = normal(rng, 62.0, 10.0);
    ages.push_back(p.age);
    counts.push_back(static_cast<double>(n_lesions));
    cohort.patients.push_back(std::move(p));
  }
  standardize(ages);
  standardize(counts);

  std::vector<double> t_event(spec.n_patients), v_cens(spec.n_patients);
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    auto& p = cohort.patients[i];
    p.clinical = {ages[i], counts[i]};
    double risk = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) risk += beta[k] * p.realized[k];
    for (std::size_t k = 0; k < kNumClinical; ++k) risk += beta[kNumClasses + k] * p.clinical[k];
    p.oracle_risk = risk;
    t_event[i] = -std::log(open_uniform(rng)) / (spec.baseline_hazard * std::exp(risk));
    v_cens[i] = open_uniform(rng);
  }

  auto censored_at = [&](double cmax) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < spec.n_patients; ++i) c += t_event[i] > v_cens[i] * cmax ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(spec.n_patients);
  };
  const double target = spec.censoring_rate;
  if (!(target >= 0.0 && target < 1.0)) throw ValidationError("infeasible censoring target");
  double cmax = INFINITY;
  if (target > 0.0) {
    const double tmax = *std::max_element(t_event.begin(), t_event.end());
    const double tmin = *std::min_element(t_event.begin(), t_event.end());
    double lo = std::log(tmin * 1e-3), hi = std::log(tmax * 1e6);  // log scale; censoring falls with cmax
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (censored_at(std::exp(mid)) > target) lo = mid;
      else hi = mid;
    }
    const double a = std::exp(lo), b = std::exp(hi);
    cmax = std::abs(censored_at(a) - target) <= std::abs(censored_at(b) - target) ? a : b;
    if (std::abs(censored_at(cmax) - target) > 0.05) throw ValidationError("infeasible censoring target");
  }
  cohort.censoring_max = cmax;
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    auto& p = cohort.patients[i];
    const double c = v_cens[i] * cmax;
    p.event = t_event[i] <= c;
    p.time = p.event ? t_event[i] : c;
  }
  return cohort;
}

// ------------------------------------------------------------------- files

namespace {

json spec_to_json(const CohortSpec& s) {
  return json{{"seed", s.seed},
              {"n_patients", s.n_patients},
              {"beta", s.beta},
              {"baseline_hazard", s.baseline_hazard},
              {"censoring_rate", s.censoring_rate},
              {"endpoint", s.endpoint},
              {"grade_weights", s.grade_weights},
              {"feature_noise", s.feature_noise}};
}

CohortSpec spec_from_json(const json& j) {
  CohortSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.n_patients = j.value("n_patients", s.n_patients);
    s.beta = j.value("beta", s.beta);
    s.baseline_hazard = j.value("baseline_hazard", s.baseline_hazard);
    s.censoring_rate = j.value("censoring_rate", s.censoring_rate);
    s.endpoint = j.value("endpoint", s.endpoint);
    s.grade_weights = j.value("grade_weights", s.grade_weights);
    s.feature_noise = j.value("feature_noise", s.feature_noise);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad cohort spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace

void save_cohort(const Cohort& cohort, const std::filesystem::path& csv_path,
                 const std::filesystem::path& features_json) {
  std::size_t k = 0;
  for (const auto& p : cohort.patients) k = std::max(k, p.lesions.size());
  CsvTable t;
  t.header = {"patient_id", "endpoint", "time_months", "event", "trg"};
  for (std::size_t l = 0; l < k; ++l) t.header.push_back("volume_" + std::to_string(l + 1));
  json patients = json::array();
  for (const auto& p : cohort.patients) {
    std::vector<std::string> row = {p.id, cohort.spec.endpoint, fmt(p.time, 9), p.event ? "1" : "0",
                                    std::to_string(p.trg)};
    json lesions = json::array();
    for (std::size_t l = 0; l < k; ++l) {
      if (l < p.lesions.size()) {
        const auto& les = p.lesions[l];
        row.push_back(fmt(les.volume, 9));
        lesions.push_back({{"composition", les.composition},
                           {"patch_classes", les.patch_classes},
                           {"patch_features", les.patch_features}});
      } else {
        row.push_back("");
      }
    }
    t.add_row(std::move(row));
    patients.push_back({{"patient_id", p.id},
                        {"age", p.age},
                        {"clinical", p.clinical},
                        {"realized", p.realized},
                        {"oracle_risk", p.oracle_risk},
                        {"lesions", lesions}});
  }
  t.save(csv_path);
  json doc{{"spec", spec_to_json(cohort.spec)}, {"censoring_max", cohort.censoring_max}, {"patients", patients}};
  write_text_file(features_json, doc.dump(1) + "\n");
}

Cohort load_cohort(const std::filesystem::path& csv_path, const std::filesystem::path& features_json) {
  const CsvTable t = read_csv(csv_path);
  json doc;
  try {
    doc = json::parse(read_text_file(features_json));
  } catch (const json::exception& e) {
    throw ValidationError("cannot parse " + features_json.string() + ": " + e.what());
  }
  Cohort cohort;
  cohort.spec = spec_from_json(doc.at("spec"));
  cohort.censoring_max = doc.value("censoring_max", 0.0);
  const auto& side = doc.at("patients");
  if (side.size() != t.rows.size()) throw ValidationError("feature sidecar does not match cohort CSV");
  const std::size_t c_id = t.column("patient_id"), c_time = t.column("time_months"), c_event = t.column("event"),
                    c_trg = t.column("trg");
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const auto& js = side[i];
    Patient p;
    p.id = row[c_id];
    if (js.at("patient_id").get<std::string>() != p.id) {
      throw ValidationError("feature sidecar out of order at patient " + p.id);
    }
    p.time = std::stod(row[c_time]);
    p.event = row[c_event] == "1";
    p.trg = std::stoi(row[c_trg]);
    p.age = js.at("age").get<double>();
    p.clinical = js.at("clinical").get<std::array<double, kNumClinical>>();
    p.realized = js.at("realized").get<Composition>();
    p.oracle_risk = js.at("oracle_risk").get<double>();
    const auto& lesions = js.at("lesions");
    for (std::size_t l = 0; l < lesions.size(); ++l) {
      Lesion les;
      les.volume = std::stod(row[t.column("volume_" + std::to_string(l + 1))]);
      les.composition = lesions[l].at("composition").get<Composition>();
      les.patch_classes = lesions[l].at("patch_classes").get<std::vector<std::uint8_t>>();
      les.patch_features = lesions[l].at("patch_features").get<std::vector<std::array<double, kNumClasses>>>();
      p.lesions.push_back(std::move(les));
    }
    if (!(p.time > 0)) throw ValidationError("patient " + p.id + ": time must be positive");
    cohort.patients.push_back(std::move(p));
  }
  return cohort;
}

std::string cohort_spec_json(const CohortSpec& spec) { return spec_to_json(spec).dump(1); }

CohortSpec cohort_spec_from_json(const std::string& text) {
  try {
    return spec_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("bad cohort spec: ") + e.what());
  }
}

std::string slide_spec_json(const SlideSpec& s) {
  return json{{"seed", s.seed},           {"height", s.height},
              {"width", s.width},         {"grade", s.grade},
              {"style", to_string(s.style)}, {"composition", s.composition},
              {"stain_jitter", s.stain_jitter}, {"noise", s.noise},
              {"regions", s.regions}}
      .dump(1);
}

SlideSpec slide_spec_from_json(const std::string& text) {
  SlideSpec s;
  try {
    const json j = json::parse(text);
    s.seed = j.value("seed", s.seed);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.grade = j.value("grade", s.grade);
    s.style = style_from_string(j.value("style", std::string("A")));
    s.composition = j.value("composition", s.composition);
    s.stain_jitter = j.value("stain_jitter", s.stain_jitter);
    s.noise = j.value("noise", s.noise);
    s.regions = j.value("regions", s.regions);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad slide spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace histoprog::synthdata
