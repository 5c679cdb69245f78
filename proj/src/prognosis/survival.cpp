#include "histoprog/prognosis/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histoprog/common/error.hpp"
#include "histoprog/gradcore/rng.hpp"

namespace histoprog::prognosis {

namespace gc = histoprog::gradcore;

std::string to_string(Endpoint e) { return e == Endpoint::OS ? "OS" : "TTR"; }

Endpoint endpoint_from_string(const std::string& s) {
  if (s == "OS") return Endpoint::OS;
  if (s == "TTR") return Endpoint::TTR;
  throw ValidationError("unknown endpoint '" + s + "' (expected OS or TTR)");
}

void validate_records(const std::vector<SurvivalRecord>& records) {
  for (const auto& r : records) {
    if (!std::isfinite(r.time) || r.time <= 0) {
      throw ValidationError("patient " + r.patient_id + ": survival time must be finite and positive");
    }
    if (r.endpoint != records.front().endpoint) throw ValidationError("records mix OS and TTR endpoints");
  }
}

// --------------------------------------------------------------- time grid

std::size_t TimeGrid::interval_of(double t) const {
  if (bounds.empty()) throw ValidationError("empty time grid");
  if (t < 0) throw ValidationError("negative time on the time grid");
  return static_cast<std::size_t>(std::upper_bound(bounds.begin(), bounds.end(), t) - bounds.begin()) - 1;
}

std::vector<double> TimeGrid::midpoints() const {
  const std::size_t m = bounds.size();
  std::vector<double> widths, mid;
  for (std::size_t k = 0; k + 1 < m; ++k) {
    widths.push_back(bounds[k + 1] - bounds[k]);
    mid.push_back(0.5 * (bounds[k] + bounds[k + 1]));
  }
  std::sort(widths.begin(), widths.end());
  const std::size_t w = widths.size();
  const double median = w == 0 ? 0.0 : (w % 2 ? widths[w / 2] : 0.5 * (widths[w / 2 - 1] + widths[w / 2]));
  mid.push_back(bounds.back() + 0.5 * median);
  return mid;
}

TimeGrid time_grid_from_bounds(std::vector<double> bounds) {
  if (bounds.size() < 2 || bounds.front() != 0.0) throw ValidationError("time grid must start at 0 with m >= 2");
  for (std::size_t k = 1; k < bounds.size(); ++k) {
    if (!(bounds[k] > bounds[k - 1])) throw ValidationError("time grid bounds must be strictly increasing");
  }
  return TimeGrid{std::move(bounds)};
}

TimeGrid make_time_grid(const std::vector<SurvivalRecord>& records, std::size_t m) {
  validate_records(records);
  std::vector<double> t;
  for (const auto& r : records) {
    if (r.event) t.push_back(r.time);
  }
  if (t.empty()) throw ValidationError("time grid needs at least one event");
  std::sort(t.begin(), t.end());
  std::vector<double> bounds{0.0};
  for (std::size_t k = 1; k < m; ++k) {
    const double pos = static_cast<double>(k) / static_cast<double>(m) * static_cast<double>(t.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, t.size() - 1);
    bounds.push_back(t[lo] + (pos - static_cast<double>(lo)) * (t[hi] - t[lo]));
  }
  try {
    return time_grid_from_bounds(std::move(bounds));
  } catch (const ValidationError&) {
    throw ValidationError("too few distinct event times for a " + std::to_string(m) + "-interval grid");
  }
}

// ------------------------------------------------------------------ losses

Var cox_pl_loss(const Var& risks, const std::vector<SurvivalRecord>& records) {
  const Tensor& r = risks.value();
  const std::size_t n = records.size();
  if (r.size() != n) throw ValidationError("cox_pl_loss: one risk per record required");
  validate_records(records);
  if (!r.all_finite()) throw ValidationError("cox_pl_loss: non-finite risk");
  if (std::none_of(records.begin(), records.end(), [](const auto& x) { return x.event; })) {
    throw ValidationError("no informative patients");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].time > records[b].time; });
  const double rmax = *std::max_element(r.data().begin(), r.data().end());

  // Walk times descending; the risk set of a group is everything seen so far.
  std::vector<double> group_sum(n, 0.0);  // S of the group each subject belongs to
  double running = 0, loss = 0;
  for (std::size_t g = 0; g < n;) {
    std::size_t e = g;
    while (e < n && records[order[e]].time == records[order[g]].time) running += std::exp(r[order[e++]] - rmax);
    for (std::size_t i = g; i < e; ++i) {
      group_sum[order[i]] = running;
      if (records[order[i]].event) loss += std::log(running) + rmax - r[order[i]];
    }
    g = e;
  }
  Tensor out = Tensor::scalar(loss);
  return gc::make_op(
      std::move(out), {risks},
      [records, order, group_sum, rmax, n](gc::Node& self) {
        const Tensor& rv = self.parents[0].value();
        Tensor& grad = self.parents[0].node()->grad_buffer();
        const double up = self.grad[0];
        double acc = 0;  // sum over events with T_i <= t of 1 / S_i
        for (std::size_t g = n; g > 0;) {
          std::size_t b = g;
          while (b > 0 && records[order[b - 1]].time == records[order[g - 1]].time) {
            --b;
            if (records[order[b]].event) acc += 1.0 / group_sum[order[b]];
          }
          for (std::size_t i = b; i < g; ++i) {
            const std::size_t k = order[i];
            grad[k] += up * (std::exp(rv[k] - rmax) * acc - (records[k].event ? 1.0 : 0.0));
          }
          g = b;
        }
      },
      "cox_pl_loss");
}

CensoredCe censored_ce_loss(const Var& interval_probs, const std::vector<SurvivalRecord>& records,
                            const TimeGrid& grid) {
  const Tensor& p = interval_probs.value();
  const std::size_t n = records.size(), m = grid.intervals();
  if (p.rank() != 2 || p.rows() != n || p.cols() != m) {
    throw ValidationError("censored_ce_loss: expected probabilities of shape {" + std::to_string(n) + "," +
                          std::to_string(m) + "}, got " + gc::shape_string(p.shape()));
  }
  validate_records(records);
  Tensor mask({n, m}, 0.0), weight({n, 1}, 0.0);
  std::size_t excluded = 0, used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = grid.interval_of(records[i].time);
    if (records[i].event) {
      mask.at(i, k) = 1.0;
    } else if (k + 1 == m) {
      ++excluded;
      for (std::size_t j = 0; j < m; ++j) mask.at(i, j) = 1.0;  // keeps the log finite; weight 0
      continue;
    } else {
      for (std::size_t j = k + 1; j < m; ++j) mask.at(i, j) = 1.0;
    }
    weight[i] = 1.0;
    ++used;
  }
  if (used == 0) throw ValidationError("no informative patients");
  Var ll = gc::log(gc::sum_rows(gc::mul(interval_probs, gc::constant(mask))));
  Var loss = gc::scale(gc::sum(gc::mul(ll, gc::constant(weight))), -1.0 / static_cast<double>(used));
  return {loss, excluded};
}

std::vector<double> risk_scores(const Tensor& interval_probs, const TimeGrid& grid) {
  const auto mid = grid.midpoints();
  if (interval_probs.cols() != mid.size()) throw ValidationError("risk_score: interval count mismatch");
  std::vector<double> out(interval_probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double e = 0;
    for (std::size_t k = 0; k < mid.size(); ++k) e += mid[k] * interval_probs.at(i, k);
    out[i] = -e;
  }
  return out;
}

double risk_score(const std::vector<double>& interval_probs, const TimeGrid& grid) {
  return risk_scores(Tensor({1, interval_probs.size()}, interval_probs), grid)[0];
}

// ----------------------------------------------------------------- metrics

double concordance_index(const std::vector<double>& risks, const std::vector<SurvivalRecord>& records) {
  const std::size_t n = records.size();
  if (risks.size() != n) throw ValidationError("concordance_index: one risk per record required");
  for (double r : risks) {
    if (std::isnan(r)) throw ValidationError("concordance_index: NaN risk");
  }
  std::vector<double> sorted = risks;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  auto rank = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), r) - sorted.begin()) + 1;
  };
  std::vector<std::uint64_t> tree(sorted.size() + 1, 0);
  auto add = [&](std::size_t i) {
    for (; i < tree.size(); i += i & (~i + 1)) ++tree[i];
  };
  auto prefix = [&](std::size_t i) {
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].time > records[b].time; });
  std::uint64_t conc = 0, ties = 0, total = 0, inserted = 0;
  for (std::size_t g = 0; g < n;) {
    std::size_t e = g;
    while (e < n && records[order[e]].time == records[order[g]].time) ++e;
    // Censored subjects tied with an event still outlive it.
    for (std::size_t i = g; i < e; ++i) {
      if (!records[order[i]].event) add(rank(risks[order[i]])), ++inserted;
    }
    for (std::size_t i = g; i < e; ++i) {
      if (!records[order[i]].event) continue;
      const std::size_t k = rank(risks[order[i]]);
      const std::uint64_t below = prefix(k - 1), upto = prefix(k);
      conc += below;
      ties += upto - below;
      total += inserted;
    }
    for (std::size_t i = g; i < e; ++i) {
      if (records[order[i]].event) add(rank(risks[order[i]])), ++inserted;
    }
    g = e;
  }
  if (total == 0) throw ValidationError("no comparable pairs for the concordance index");
  return static_cast<double>(2 * conc + ties) / static_cast<double>(2 * total);
}

CIndexCi bootstrap_cindex(const std::vector<double>& risks, const std::vector<SurvivalRecord>& records,
                          std::size_t resamples, std::uint64_t seed) {
  CIndexCi ci;
  ci.estimate = concordance_index(risks, records);
  const std::size_t n = records.size();
  std::vector<double> values(resamples, std::nan(""));
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(resamples); ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::vector<double> r(n);
    std::vector<SurvivalRecord> rec(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = uniform_index(rng, n);
      r[i] = risks[j];
      rec[i] = records[j];
    }
    try {
      values[static_cast<std::size_t>(b)] = concordance_index(r, rec);
    } catch (const ValidationError&) {
      // resample without comparable pairs
    }
  }
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }), values.end());
  if (values.empty()) {
    ci.low = ci.high = ci.estimate;
    return ci;
  }
  std::sort(values.begin(), values.end());
  auto pct = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  ci.low = pct(0.025);
  ci.high = pct(0.975);
  return ci;
}

std::vector<KmPoint> kaplan_meier(const std::vector<SurvivalRecord>& records) {
  if (records.empty()) throw ValidationError("kaplan_meier needs at least one record");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });
  std::vector<KmPoint> curve{{0.0, 1.0, records.size(), 0, 0}};
  double s = 1.0;
  std::size_t at_risk = records.size();
  for (std::size_t g = 0; g < order.size();) {
    std::size_t e = g, d = 0, c = 0;
    while (e < order.size() && records[order[e]].time == records[order[g]].time) {
      (records[order[e]].event ? d : c) += 1;
      ++e;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      curve.push_back({records[order[g]].time, s, at_risk, d, c});
    }
    at_risk -= d + c;
    g = e;
  }
  return curve;
}

double survival_at(const std::vector<KmPoint>& curve, double t) {
  double s = 1.0;
  for (const auto& p : curve) {
    if (p.time > t) break;
    s = p.survival;
  }
  return s;
}

LogRank log_rank_test(const std::vector<SurvivalRecord>& a, const std::vector<SurvivalRecord>& b) {
  if (a.empty() || b.empty()) throw ValidationError("log-rank test needs two nonempty groups");
  std::vector<double> times;
  for (const auto* g : {&a, &b}) {
    for (const auto& r : *g) {
      if (r.event) times.push_back(r.time);
    }
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  auto counts = [](const std::vector<SurvivalRecord>& g, double t, std::size_t& at_risk, std::size_t& events) {
    at_risk = events = 0;
    for (const auto& r : g) {
      if (r.time >= t) ++at_risk;
      if (r.event && r.time == t) ++events;
    }
  };
  LogRank res;
  double oa = 0, ea = 0, ob = 0, eb = 0, var = 0;
  for (double t : times) {
    std::size_t na, da, nb, db;
    counts(a, t, na, da);
    counts(b, t, nb, db);
    const double n = static_cast<double>(na + nb), d = static_cast<double>(da + db);
    oa += static_cast<double>(da);
    ob += static_cast<double>(db);
    ea += d * static_cast<double>(na) / n;
    eb += d * static_cast<double>(nb) / n;
    if (na + nb > 1) {
      var += d * static_cast<double>(na * nb) * (n - d) / (n * n * (n - 1));
    }
  }
  res.observed_a = oa;
  res.expected_a = ea;
  res.variance = var;
  if (var > 0) {
    // Written symmetrically in the two groups so swapping them is exact.
    const double diff = 0.5 * ((oa - ea) - (ob - eb));
    res.statistic = diff * diff / var;
    res.p_value = std::erfc(std::sqrt(res.statistic / 2.0));
  }
  return res;
}

Stratification stratify_risks(const std::vector<double>& risks, const std::vector<SurvivalRecord>& records) {
  if (risks.size() != records.size()) throw ValidationError("stratify_risks: one risk per record required");
  if (risks.size() < 2) throw ValidationError("stratify_risks needs at least two patients");
  std::vector<double> sorted = risks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  Stratification s;
  s.threshold = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<SurvivalRecord> low, high;
  for (std::size_t i = 0; i < n; ++i) {
    const bool h = risks[i] > s.threshold;
    s.high.push_back(h);
    (h ? high : low).push_back(records[i]);
  }
  if (!low.empty()) s.km_low = kaplan_meier(low);
  if (!high.empty()) s.km_high = kaplan_meier(high);
  if (!low.empty() && !high.empty()) {
    s.test = log_rank_test(low, high);
    s.has_test = s.test.variance > 0;
  }
  return s;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("spearman needs two equal-length samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t g = 0; g < order.size();) {
      std::size_t e = g;
      while (e < order.size() && v[order[e]] == v[order[g]]) ++e;
      const double avg = 0.5 * static_cast<double>(g + e - 1) + 1.0;
      for (std::size_t i = g; i < e; ++i) r[order[i]] = avg;
      g = e;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace histoprog::prognosis
