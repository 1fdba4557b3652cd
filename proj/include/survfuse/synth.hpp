// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "encoders.hpp"
#include "rng.hpp"
#include "survival.hpp"
#include "tensor.hpp"

namespace survfuse {

struct SynthConfig {
  std::size_t patients = 200;
  std::size_t clusters = 8;   // planted patch phenotypes
  std::size_t patch_dim = 32;
  std::size_t genes = 64;
  std::size_t patches_min = 20;
  std::size_t patches_max = 40;
  double effect = 3.0;
  double censoring_rate = 0.2;  // expected censored fraction, in [0, 1)
  double base_hazard = 0.05;    // events per month at zero latent risk
  std::uint64_t seed = 7;
};

inline void validate_synth_config(const SynthConfig& config) {
  require(config.patients >= 1, "synth_cohort: need at least one patient");
  require(config.clusters >= 1, "synth_cohort: need at least one cluster");
  require(config.patch_dim >= 1, "synth_cohort: patch dimension must be positive");
  require(config.genes >= 1, "synth_cohort: gene count must be positive");
  require(config.patches_min >= 1 && config.patches_max >= config.patches_min,
          "synth_cohort: patch count range is empty");
  require(config.censoring_rate >= 0.0 && config.censoring_rate < 1.0,
          "synth_cohort: censoring rate must lie in [0, 1)");
  require(config.base_hazard > 0.0,
          "synth_cohort: base hazard must be positive");
}

struct SynthCohort {
  std::vector<PatchFeatureSet> patch_sets;
  Tensor expression;  // patients x genes
  std::vector<std::string> gene_symbols;
  std::vector<SurvivalRecord> records;
  // Generator ground truth, kept for oracle tests only.
  std::vector<int> group;
  std::vector<double> latent_risk;
};

namespace detail {

// Expected censored fraction when an independent exponential censor with the
// given rate races patient-specific exponential event rates.
inline double censored_fraction(const std::vector<double>& event_rates,
                                double censor_rate) {
  double total = 0.0;
  for (const double r : event_rates) total += censor_rate / (censor_rate + r);
  return total / static_cast<double>(event_rates.size());
}

// Monotone in censor_rate, so the target fraction is found by bisection.
inline double solve_censor_rate(const std::vector<double>& event_rates,
                                double target) {
  double lo = 0.0, hi = 1.0;
  while (censored_fraction(event_rates, hi) < target) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (censored_fraction(event_rates, mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Two latent risk groups with a continuous per-patient risk score. The score
// shifts both patch features and gene expression along fixed seeded
// directions (so either modality can recover it), and scales an exponential
// event hazard. Effect 0 collapses the score to zero: features carry no
// survival signal and every patient shares the base hazard.
inline SynthCohort synth_cohort(const SynthConfig& config) {
  validate_synth_config(config);
  Rng rng(Rng::mix(config.seed, 0x73796e7468ULL));

  const std::size_t n = config.patients;
  const std::size_t d = config.patch_dim;
  SynthCohort cohort;

  std::vector<std::vector<double>> prototypes(
      config.clusters, std::vector<double>(d, 0.0));
  for (auto& proto : prototypes) {
    for (double& v : proto) v = 2.0 * rng.normal();
  }
  std::vector<double> patch_direction(d);
  double patch_norm = 0.0;
  for (double& v : patch_direction) {
    v = rng.normal();
    patch_norm += v * v;
  }
  patch_norm = std::sqrt(patch_norm);
  for (double& v : patch_direction) v /= patch_norm;

  std::vector<double> gene_loading(config.genes);
  for (double& v : gene_loading) v = 0.5 * rng.normal();
  std::vector<std::size_t> gene_module(config.genes);
  for (std::size_t g = 0; g < config.genes; ++g) {
    gene_module[g] = g % config.clusters;
  }

  cohort.group.resize(n);
  cohort.latent_risk.resize(n);
  std::vector<double> event_rates(n);
  for (std::size_t i = 0; i < n; ++i) {
    cohort.group[i] = static_cast<int>(rng.index(2));
    const double centered = static_cast<double>(cohort.group[i]) - 0.5;
    cohort.latent_risk[i] =
        config.effect * centered + 0.3 * config.effect * rng.normal();
    event_rates[i] =
        config.base_hazard * std::exp(1.5 * cohort.latent_risk[i]);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t m =
        config.patches_min +
        rng.index(config.patches_max - config.patches_min + 1);
    Tensor patches{Shape{m, d}};
    for (std::size_t p = 0; p < m; ++p) {
      const auto& proto = prototypes[rng.index(config.clusters)];
      for (std::size_t j = 0; j < d; ++j) {
        patches.at(p, j) = proto[j] +
                           cohort.latent_risk[i] * patch_direction[j] +
                           0.5 * rng.normal();
      }
    }
    PatchFeatureSet set;
    set.patient_id = "patient_" + std::to_string(i);
    set.patches = patches;
    cohort.patch_sets.push_back(set);
  }

  cohort.expression = Tensor{Shape{n, config.genes}};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> module_factor(config.clusters);
    for (double& v : module_factor) v = rng.normal();
    for (std::size_t g = 0; g < config.genes; ++g) {
      cohort.expression.at(i, g) = gene_loading[g] * cohort.latent_risk[i] +
                                   0.8 * module_factor[gene_module[g]] +
                                   0.5 * rng.normal();
    }
  }
  cohort.gene_symbols.reserve(config.genes);
  for (std::size_t g = 0; g < config.genes; ++g) {
    cohort.gene_symbols.push_back("GENE" + std::to_string(g));
  }

  std::vector<double> event_times(n);
  for (std::size_t i = 0; i < n; ++i) {
    event_times[i] = rng.exponential(event_rates[i]);
  }
  double censor_rate = 0.0;
  if (config.censoring_rate > 0.0) {
    censor_rate =
        detail::solve_censor_rate(event_rates, config.censoring_rate);
  }
  for (std::size_t i = 0; i < n; ++i) {
    SurvivalRecord record;
    record.patient_id = cohort.patch_sets[i].patient_id;
    if (censor_rate > 0.0) {
      const double censor_time = rng.exponential(censor_rate);
      record.event = event_times[i] <= censor_time ? 1 : 0;
      record.time = std::min(event_times[i], censor_time);
    } else {
      record.event = 1;
      record.time = event_times[i];
    }
    cohort.records.push_back(record);
  }
  return cohort;
}

}  // namespace survfuse
