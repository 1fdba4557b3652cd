// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <survfuse/rng.hpp>
#include <survfuse/survival.hpp>

#include "helpers.hpp"

using survfuse::cox_loss;
using survfuse::cox_loss_value;
using survfuse::GradientTape;
using survfuse::mlp_head;
using survfuse::NoGradGuard;
using survfuse::RiskHeadParams;
using survfuse::Rng;
using survfuse::SurvivalRecord;
using survfuse::Tensor;
using testutil::close;
using testutil::rand_tensor;

namespace {

// Literal transcription of the partial likelihood: for every observed event,
// scan the whole cohort for its inclusive risk set. Extended precision, no
// shared code with the library path.
double cox_ref(const std::vector<double>& risks,
               const std::vector<SurvivalRecord>& records) {
  long double loss = 0.0L;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].event) continue;
    long double mx = -std::numeric_limits<long double>::infinity();
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (records[j].time >= records[i].time) {
        mx = std::max(mx, static_cast<long double>(risks[j]));
      }
    }
    long double total = 0.0L;
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (records[j].time >= records[i].time) {
        total += expl(static_cast<long double>(risks[j]) - mx);
      }
    }
    loss += logl(total) + mx - static_cast<long double>(risks[i]);
  }
  return static_cast<double>(loss);
}

std::vector<SurvivalRecord> random_cohort(Rng& rng, std::size_t n) {
  std::vector<SurvivalRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].patient_id = "p" + std::to_string(i);
    records[i].time = rng.uniform(0.1, 50.0);
    records[i].event = rng.uniform() < 0.7;
  }
  return records;
}

}  // namespace

TEST_CASE("cox_loss on two equal risks equals log 2") {
  const std::vector<SurvivalRecord> records = {
      {"a", 1.0, true}, {"b", 2.0, true}};
  REQUIRE(close(cox_loss_value({0.0, 0.0}, records), std::log(2.0), 1e-15));
}

TEST_CASE("patients censored before an event leave its risk set") {
  const std::vector<SurvivalRecord> records = {
      {"a", 1.0, false}, {"b", 2.0, true}};
  // Only one patient remains at risk at t = 2, so the term is log(e^r) - r.
  REQUIRE(close(cox_loss_value({3.7, -1.2}, records), 0.0, 1e-15));
}

TEST_CASE("tied event times share inclusive risk sets") {
  const std::vector<SurvivalRecord> records = {
      {"a", 2.0, true}, {"b", 2.0, true}};
  const double a = 0.4, b = -1.1;
  const double lse = std::log(std::exp(a) + std::exp(b));
  REQUIRE(close(cox_loss_value({a, b}, records), 2 * lse - a - b, 1e-14));
}

TEST_CASE("cox_loss matches the double-loop reference on random cohorts") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(20);
    auto records = random_cohort(rng, n);
    std::vector<double> risks(n);
    for (double& r : risks) r = rng.uniform(-5.0, 5.0);
    const double got = cox_loss_value(risks, records);
    const double want = cox_ref(risks, records);
    REQUIRE(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("cox_loss is stable for large risk magnitudes") {
  const std::vector<SurvivalRecord> records = {
      {"a", 1.0, true}, {"b", 2.0, true}, {"c", 3.0, false}};
  const std::vector<double> risks = {800.0, -800.0, 790.0};
  const double got = cox_loss_value(risks, records);
  REQUIRE(std::isfinite(got));
  REQUIRE(close(got, cox_ref(risks, records), 1e-12));
}

TEST_CASE("raising the earliest event's risk lowers the loss") {
  GradientTape tape;
  Tensor risks = tape.parameter(Tensor::column({0.3, -0.2, 0.5, 0.1}));
  const std::vector<SurvivalRecord> records = {{"a", 1.0, true},
                                               {"b", 2.0, false},
                                               {"c", 3.0, true},
                                               {"d", 4.0, false}};
  Tensor loss = cox_loss(risks, records);
  tape.backward(loss);
  REQUIRE(risks.grad()[0] < 0.0);
  // The latest patient is only ever a competitor, so more risk hurts.
  REQUIRE(risks.grad()[3] > 0.0);
}

TEST_CASE("cox_loss gradient matches finite differences") {
  Rng rng(5150);
  GradientTape tape;
  Tensor risks = tape.parameter(rand_tensor(12, 1, rng, 2.0));
  const auto records = random_cohort(rng, 12);
  Tensor loss = cox_loss(risks, records);
  tape.backward(loss);
  auto value = [&]() {
    NoGradGuard guard(tape);
    return cox_loss(risks, records).value();
  };
  for (std::size_t i = 0; i < risks.size(); ++i) {
    const double fd = survfuse::fd_partial(value, risks, i, 1e-6);
    REQUIRE(close(risks.grad()[i], fd, 1e-7));
  }
}

TEST_CASE("an all-censored cohort yields a constant zero loss and a flag") {
  const std::vector<SurvivalRecord> records = {
      {"a", 1.0, false}, {"b", 2.0, false}};
  bool all_censored = false;
  Tensor loss = cox_loss(Tensor::column({0.5, -0.5}), records, &all_censored);
  REQUIRE(all_censored);
  REQUIRE(loss.value() == 0.0);
  REQUIRE(loss.tape() == nullptr);
}

TEST_CASE("cox_loss validates its inputs") {
  const std::vector<SurvivalRecord> records = {
      {"a", 1.0, true}, {"b", 2.0, true}};
  REQUIRE_THROWS_AS(cox_loss(Tensor::column({1.0}), records),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cox_loss(Tensor::row({1.0, 2.0}), records),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cox_loss(Tensor::column({1.0, 2.0}), {}),
                    std::invalid_argument);
  const std::vector<SurvivalRecord> bad_time = {{"a", -1.0, true}};
  REQUIRE_THROWS_AS(cox_loss(Tensor::column({1.0}), bad_time),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      cox_loss(Tensor::column({std::nan(""), 0.0}), records),
      std::invalid_argument);
}

TEST_CASE("mlp_head joins modalities and bounds the risk when asked") {
  Rng rng(88);
  GradientTape tape;
  RiskHeadParams params;
  params.w1 = tape.parameter(rand_tensor(10, 8, rng, 0.5));
  params.b1 = tape.parameter(rand_tensor(1, 8, rng, 0.5));
  params.w2 = tape.parameter(rand_tensor(8, 4, rng, 0.5));
  params.b2 = tape.parameter(rand_tensor(1, 4, rng, 0.5));
  params.w3 = tape.parameter(rand_tensor(4, 1, rng, 0.5));
  params.b3 = tape.parameter(rand_tensor(1, 1, rng, 0.5));

  Tensor img = rand_tensor(1, 6, rng);
  Tensor gene = rand_tensor(1, 4, rng);
  auto out = mlp_head(params, img, gene);
  REQUIRE(out.joint.cols() == 10);
  REQUIRE(out.risk.is_scalar());
  REQUIRE(out.risk.value() > 0.0);
  REQUIRE(out.risk.value() < 1.0);

  tape.backward(out.risk);
  double grad_norm = 0.0;
  for (const Tensor& p : tape.parameters()) {
    for (const double g : p.grad()) grad_norm += g * g;
  }
  REQUIRE(grad_norm > 0.0);

  tape.clear_nodes();
  params.sigmoid_output = false;
  {
    NoGradGuard guard(tape);
    auto raw = mlp_head(params, img, gene);
    // The linear output must differ from the squashed one.
    REQUIRE(raw.risk.value() != out.risk.value());
  }
}
