// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace survfuse {

struct SurvivalRecord {
  std::string patient_id;
  double time = 0.0;
  // true: the event was observed at `time`. false: follow-up was censored.
  bool event = false;
};

inline void validate_records(const std::vector<SurvivalRecord>& records,
                             const char* where) {
  if (records.empty()) {
    throw std::invalid_argument(std::string(where) + ": empty cohort");
  }
  for (const SurvivalRecord& r : records) {
    if (!std::isfinite(r.time) || r.time < 0.0) {
      throw std::invalid_argument(std::string(where) +
                                  ": non-finite or negative follow-up time"
                                  " for patient '" +
                                  r.patient_id + "'");
    }
  }
}

// Final risk head: the two pooled modality vectors are joined on the feature
// axis and passed through two ReLU layers and a linear output, squashed to
// (0, 1) when sigmoid_output is set.
struct RiskHeadParams {
  Tensor w1, b1;
  Tensor w2, b2;
  Tensor w3, b3;
  bool sigmoid_output = true;
};

struct RiskOutput {
  Tensor joint;
  Tensor hidden;
  Tensor risk;  // 1 x 1
};

inline RiskOutput mlp_head(const RiskHeadParams& params,
                           const Tensor& pooled_image,
                           const Tensor& pooled_gene) {
  require(pooled_image.rows() == 1 && pooled_gene.rows() == 1,
          "mlp_head: pooled inputs must be single rows");
  RiskOutput out;
  out.joint = concat_cols(pooled_image, pooled_gene);
  Tensor h1 = relu(affine(out.joint, params.w1, params.b1));
  out.hidden = relu(affine(h1, params.w2, params.b2));
  Tensor r = affine(out.hidden, params.w3, params.b3);
  out.risk = params.sigmoid_output ? sigmoid(r) : r;
  return out;
}

// Negative log partial likelihood of the Cox model:
//   sum over observed events i of  log( sum_{j : t_j >= t_i} exp(r_j) ) - r_i
// The risk set is inclusive at ties. Each log-sum-exp subtracts the risk-set
// maximum as a detached constant, which leaves the value exact and the
// gradient the exact softmax over the risk set.
//
// A cohort with zero observed events has no likelihood terms; the loss is a
// constant zero and *all_censored (when given) is set.
inline Tensor cox_loss(const Tensor& risks,
                       const std::vector<SurvivalRecord>& records,
                       bool* all_censored = nullptr) {
  validate_records(records, "cox_loss");
  require(risks.shape().size() == 2 && risks.cols() == 1,
          "cox_loss: risks must be an n x 1 column, got " +
              shape_str(risks.shape()));
  require(risks.rows() == records.size(),
          "cox_loss: risk count " + std::to_string(risks.rows()) +
              " does not match record count " +
              std::to_string(records.size()));
  require(risks.finite(), "cox_loss: risks contain non-finite values");

  const std::size_t n = records.size();
  if (all_censored != nullptr) *all_censored = false;

  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < n; ++i) {
    if (!records[i].event) continue;
    std::vector<std::size_t> risk_set;
    for (std::size_t j = 0; j < n; ++j) {
      if (records[j].time >= records[i].time) risk_set.push_back(j);
    }
    Tensor subset = gather_rows(risks, risk_set);
    const double shift = max_value(subset);
    Tensor ex = exp_elem(affine_scalar(subset, 1.0, -shift));
    Tensor lse = affine_scalar(log_elem(sum_all(ex)), 1.0, shift);
    Tensor own = gather_rows(risks, {i});
    terms.push_back(sub(lse, own));
  }

  if (terms.empty()) {
    if (all_censored != nullptr) *all_censored = true;
    return Tensor::scalar(0.0);
  }
  Tensor total = sum_all(concat_rows(std::span<const Tensor>(terms)));
  detail::check_finite(total, "cox_loss");
  return total;
}

// Value-only convenience for validation passes and tests.
inline double cox_loss_value(const std::vector<double>& risks,
                             const std::vector<SurvivalRecord>& records) {
  return cox_loss(Tensor::column(std::vector<double>(risks)), records).value();
}

}  // namespace survfuse
