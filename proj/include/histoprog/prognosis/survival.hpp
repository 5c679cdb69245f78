#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "histoprog/gradcore/var.hpp"

namespace histoprog::prognosis {

using gradcore::Tensor;
using gradcore::Var;

enum class Endpoint { OS, TTR };
std::string to_string(Endpoint e);
Endpoint endpoint_from_string(const std::string& s);

struct SurvivalRecord {
  std::string patient_id;
  double time = 0;  // months
  bool event = false;
  Endpoint endpoint = Endpoint::OS;
};

void validate_records(const std::vector<SurvivalRecord>& records);

/// Interval boundaries 0 = t0 < t1 < ... < t_{m-1}; interval k is
/// [t_k, t_{k+1}) and the last one is open-ended.
struct TimeGrid {
  std::vector<double> bounds;

  std::size_t intervals() const { return bounds.size(); }
  std::size_t interval_of(double t) const;
  /// Interval midpoints; the last is t_{m-1} plus half the median finite width.
  std::vector<double> midpoints() const;
};

/// m intervals cut at the quantiles of the event times.
TimeGrid make_time_grid(const std::vector<SurvivalRecord>& records, std::size_t m = 4);
TimeGrid time_grid_from_bounds(std::vector<double> bounds);

/// Sum over event patients of ln sum_{T_j >= T_i} exp(r_j - r_i) (Breslow
/// ties). `risks` has shape {n} or {n,1}.
Var cox_pl_loss(const Var& risks, const std::vector<SurvivalRecord>& records);

struct CensoredCe {
  Var loss;              // mean over contributing patients
  std::size_t excluded;  // censored in the last interval
};
/// Events: -ln p[Y_i]. Censored: -ln sum_{y > Z_i} p[y].
CensoredCe censored_ce_loss(const Var& interval_probs, const std::vector<SurvivalRecord>& records,
                            const TimeGrid& grid);

/// -sum_y midpoint(y) p[y], per row.
std::vector<double> risk_scores(const Tensor& interval_probs, const TimeGrid& grid);
double risk_score(const std::vector<double>& interval_probs, const TimeGrid& grid);

/// Harrell's C over event-anchored comparable pairs; risk ties count 1/2.
double concordance_index(const std::vector<double>& risks, const std::vector<SurvivalRecord>& records);

struct CIndexCi {
  double estimate = 0, low = 0, high = 0;
};
/// Percentile bootstrap (2.5%, 97.5%) over patient resamples.
CIndexCi bootstrap_cindex(const std::vector<double>& risks, const std::vector<SurvivalRecord>& records,
                          std::size_t resamples = 200, std::uint64_t seed = 0);

struct KmPoint {
  double time = 0;
  double survival = 1;
  std::size_t at_risk = 0;
  std::size_t events = 0;
  std::size_t censored = 0;
};
/// Starts at (0, 1); one point per distinct event time.
std::vector<KmPoint> kaplan_meier(const std::vector<SurvivalRecord>& records);
/// S(t) of a step curve (right-continuous).
double survival_at(const std::vector<KmPoint>& curve, double t);

struct LogRank {
  double statistic = 0;
  double p_value = 1;
  double observed_a = 0, expected_a = 0, variance = 0;
};
LogRank log_rank_test(const std::vector<SurvivalRecord>& a, const std::vector<SurvivalRecord>& b);

struct Stratification {
  std::vector<bool> high;  // per patient
  double threshold = 0;    // median risk; risks <= threshold are low
  std::vector<KmPoint> km_low, km_high;
  bool has_test = false;
  LogRank test;
};
Stratification stratify_risks(const std::vector<double>& risks, const std::vector<SurvivalRecord>& records);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace histoprog::prognosis
