// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "survival.hpp"
#include "tensor.hpp"

namespace survfuse {

// One end-to-end gradient audit: a small model, a synthetic multi-patient
// cohort, the partial-likelihood loss, and a comparison of every sampled
// parameter coordinate against a central finite difference.
struct GradCheckConfig {
  std::size_t clusters = 2;
  std::size_t patch_dim = 6;
  std::size_t feature_dim = 8;
  std::size_t model_dim = 8;
  std::size_t heads = 2;
  std::size_t depth = 1;
  std::size_t pool_heads = 2;
  double pool_ratio = 0.5;
  std::size_t patients = 4;
  std::size_t genes = 0;  // 0 means twice the cluster count
  std::size_t samples = 400;
  double step = 1e-4;
  double tolerance = 1e-3;
  double gradient_floor = 1e-8;
  std::uint64_t seed = 1;
};

struct GradCheckReport {
  std::size_t sampled = 0;
  std::size_t checked = 0;
  std::size_t within_tolerance = 0;
  double max_relative_error = 0.0;

  double pass_fraction() const {
    if (checked == 0) return 0.0;
    return static_cast<double>(within_tolerance) /
           static_cast<double>(checked);
  }
  bool passed(double required_fraction = 0.99) const {
    return checked > 0 && pass_fraction() >= required_fraction;
  }
};

inline GradCheckReport gradcheck_model(const GradCheckConfig& check) {
  RunConfig config;
  config.seed = check.seed;
  config.clusters = check.clusters;
  config.patch_dim = check.patch_dim;
  config.feature_dim = check.feature_dim;
  config.model_dim = check.model_dim;
  config.heads = check.heads;
  config.depth = check.depth;
  config.pool_heads = check.pool_heads;
  config.pool_ratio = check.pool_ratio;
  config.gene_mlp_hidden = 6;
  config.head_hidden1 = 8;
  config.head_hidden2 = 4;
  validate_config(config);

  const std::size_t genes =
      check.genes != 0 ? check.genes : 2 * check.clusters;
  require(genes >= check.clusters,
          "gradcheck_model: fewer genes than modules");
  GeneModuleMembership membership;
  membership.modules.resize(check.clusters);
  for (std::size_t g = 0; g < genes; ++g) {
    membership.modules[g % check.clusters].push_back(g);
  }

  SurvivalModel model(config, membership, check.seed);
  Rng rng(Rng::mix(check.seed, 0x67726164ULL));

  require(check.patients >= 2, "gradcheck_model: need at least 2 patients");
  std::vector<PatchFeatureSet> sets(check.patients);
  std::vector<std::vector<std::size_t>> assignments(check.patients);
  std::vector<std::vector<double>> expressions(check.patients);
  std::vector<SurvivalRecord> records(check.patients);
  for (std::size_t i = 0; i < check.patients; ++i) {
    const std::size_t patch_count = check.clusters + (i % 3);
    sets[i].patient_id = "g" + std::to_string(i);
    sets[i].patches = Tensor{Shape{patch_count, check.patch_dim}};
    for (double& v : sets[i].patches.data()) v = rng.uniform(-1.0, 1.0);
    assignments[i].resize(patch_count);
    for (std::size_t j = 0; j < patch_count; ++j) {
      assignments[i][j] = j % check.clusters;
    }
    expressions[i].resize(genes);
    for (double& v : expressions[i]) v = rng.uniform(-1.0, 1.0);
    records[i].patient_id = sets[i].patient_id;
    records[i].time = 1.0 + static_cast<double>(i) + rng.uniform(0.0, 0.5);
    records[i].event = i == 0 || rng.uniform(0.0, 1.0) < 0.75;
  }

  GradientTape& tape = model.tape();
  const auto batch_loss = [&]() {
    std::vector<double> risks(check.patients);
    for (std::size_t i = 0; i < check.patients; ++i) {
      risks[i] =
          model.forward(sets[i], assignments[i], expressions[i]).risk.value();
    }
    return cox_loss_value(risks, records);
  };

  tape.zero_grad();
  std::vector<Tensor> risk_rows;
  for (std::size_t i = 0; i < check.patients; ++i) {
    risk_rows.push_back(
        model.forward(sets[i], assignments[i], expressions[i]).risk);
  }
  Tensor loss = cox_loss(concat_rows(risk_rows), records);
  tape.backward(loss);
  tape.clear_nodes();

  std::vector<Tensor>& parameters = tape.parameters();
  std::size_t total = 0;
  for (const Tensor& p : parameters) total += p.size();

  GradCheckReport report;
  const auto audit = [&](Tensor& parameter, std::size_t coordinate) {
    ++report.sampled;
    const double analytic = parameter.grad()[coordinate];
    double numeric;
    {
      NoGradGuard guard(tape);
      numeric = fd_partial(batch_loss, parameter, coordinate, check.step);
    }
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale <= check.gradient_floor) return;
    ++report.checked;
    const double relative = std::abs(analytic - numeric) / scale;
    report.max_relative_error = std::max(report.max_relative_error, relative);
    if (relative < check.tolerance) ++report.within_tolerance;
  };

  if (check.samples >= total) {
    for (Tensor& parameter : parameters) {
      for (std::size_t c = 0; c < parameter.size(); ++c) audit(parameter, c);
    }
  } else {
    for (std::size_t s = 0; s < check.samples; ++s) {
      std::size_t flat = rng.index(total);
      for (Tensor& parameter : parameters) {
        if (flat < parameter.size()) {
          audit(parameter, flat);
          break;
        }
        flat -= parameter.size();
      }
    }
  }
  return report;
}

}  // namespace survfuse
