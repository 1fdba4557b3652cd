// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "survival.hpp"

namespace survfuse {

enum class TieRule {
  // Tied predicted risks earn no credit.
  strict,
  // Tied predicted risks earn half credit.
  half,
};

struct ConcordanceResult {
  double c_index = 0.0;
  std::size_t comparable_pairs = 0;
};

// Harrell-style concordance. A pair (i, j) is comparable when patient i has
// an observed event and patient j survives strictly longer. The pair is
// concordant when the model assigns i the higher risk. Zero comparable pairs
// leave the concordance undefined, which is an error distinct from c = 0.
inline ConcordanceResult c_index(const std::vector<double>& risks,
                                 const std::vector<SurvivalRecord>& records,
                                 TieRule ties = TieRule::strict) {
  validate_records(records, "c_index");
  if (records.size() < 2) {
    throw std::invalid_argument("c_index: needs at least 2 patients");
  }
  if (risks.size() != records.size()) {
    throw std::invalid_argument(
        "c_index: risk count " + std::to_string(risks.size()) +
        " does not match record count " + std::to_string(records.size()));
  }
  for (const double r : risks) {
    if (!std::isfinite(r)) {
      throw std::invalid_argument("c_index: risks contain non-finite values");
    }
  }
  const std::size_t n = records.size();
  std::size_t comparable = 0;
  double credit = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!records[i].event) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (records[j].time <= records[i].time) continue;
      ++comparable;
      if (risks[i] > risks[j]) {
        credit += 1.0;
      } else if (risks[i] == risks[j] && ties == TieRule::half) {
        credit += 0.5;
      }
    }
  }
  if (comparable == 0) {
    throw std::domain_error(
        "c_index: no comparable pairs, concordance is undefined");
  }
  ConcordanceResult out;
  out.comparable_pairs = comparable;
  out.c_index = credit / static_cast<double>(comparable);
  return out;
}

// Splits by the cohort median risk (lower middle for even counts): strictly
// above the median is the high-risk group. Returns 1 for high, 0 for low.
inline std::vector<int> stratify_by_median(const std::vector<double>& risks) {
  if (risks.size() < 2) {
    throw std::invalid_argument("stratify_by_median: needs at least 2 risks");
  }
  std::vector<double> sorted(risks);
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[(sorted.size() - 1) / 2];
  std::vector<int> group(risks.size());
  for (std::size_t i = 0; i < risks.size(); ++i) {
    group[i] = risks[i] > median ? 1 : 0;
  }
  return group;
}

struct KmPoint {
  double time = 0.0;
  double survival = 1.0;
  std::size_t at_risk = 0;
};

// Product-limit estimator. The curve starts at (0, 1) and adds one point per
// distinct time with at least one observed event; censored-only times change
// the at-risk count but add no point.
inline std::vector<KmPoint> kaplan_meier(
    const std::vector<SurvivalRecord>& records) {
  validate_records(records, "kaplan_meier");
  std::set<double> event_times;
  for (const SurvivalRecord& r : records) {
    if (r.event) event_times.insert(r.time);
  }
  std::vector<KmPoint> curve;
  curve.push_back({0.0, 1.0, records.size()});
  double survival = 1.0;
  for (const double t : event_times) {
    std::size_t at_risk = 0, deaths = 0;
    for (const SurvivalRecord& r : records) {
      if (r.time >= t) ++at_risk;
      if (r.event && r.time == t) ++deaths;
    }
    survival *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
    curve.push_back({t, survival, at_risk});
  }
  return curve;
}

// Step-function lookup: survival just after time t.
inline double km_survival_at(const std::vector<KmPoint>& curve, double t) {
  if (curve.empty()) {
    throw std::invalid_argument("km_survival_at: empty curve");
  }
  double s = 1.0;
  for (const KmPoint& p : curve) {
    if (p.time <= t) {
      s = p.survival;
    } else {
      break;
    }
  }
  return s;
}

struct LogRankResult {
  double statistic = 0.0;
  double p_value = 1.0;
  // Set when the variance sum is zero (no informative event times); the
  // statistic is reported as zero and the p-value as one.
  bool degenerate = false;
};

// Two-group log-rank test with the hypergeometric variance at each distinct
// event time. The statistic is chi-squared with one degree of freedom under
// the null; p = erfc(sqrt(stat / 2)).
inline LogRankResult log_rank(const std::vector<SurvivalRecord>& group_a,
                              const std::vector<SurvivalRecord>& group_b) {
  validate_records(group_a, "log_rank");
  validate_records(group_b, "log_rank");

  std::set<double> event_times;
  for (const SurvivalRecord& r : group_a) {
    if (r.event) event_times.insert(r.time);
  }
  for (const SurvivalRecord& r : group_b) {
    if (r.event) event_times.insert(r.time);
  }

  double observed_minus_expected = 0.0;
  double variance = 0.0;
  for (const double t : event_times) {
    std::size_t at_risk_a = 0, at_risk_b = 0, deaths_a = 0, deaths_b = 0;
    for (const SurvivalRecord& r : group_a) {
      if (r.time >= t) ++at_risk_a;
      if (r.event && r.time == t) ++deaths_a;
    }
    for (const SurvivalRecord& r : group_b) {
      if (r.time >= t) ++at_risk_b;
      if (r.event && r.time == t) ++deaths_b;
    }
    const double na = static_cast<double>(at_risk_a);
    const double nb = static_cast<double>(at_risk_b);
    const double n = na + nb;
    const double d = static_cast<double>(deaths_a + deaths_b);
    observed_minus_expected += static_cast<double>(deaths_a) - d * na / n;
    if (n > 1.0) {
      variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
    }
  }

  LogRankResult out;
  if (variance <= 0.0) {
    out.degenerate = true;
    return out;
  }
  out.statistic =
      observed_minus_expected * observed_minus_expected / variance;
  out.p_value = std::erfc(std::sqrt(out.statistic / 2.0));
  return out;
}

}  // namespace survfuse
