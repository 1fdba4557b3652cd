// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include <survfuse/encoders.hpp>
#include <survfuse/metrics.hpp>
#include <survfuse/rng.hpp>
#include <survfuse/synth.hpp>

#include "helpers.hpp"

using survfuse::cluster_genes;
using survfuse::encode_gene_modules;
using survfuse::encode_phenotypes;
using survfuse::FcnParams;
using survfuse::FeatureBag;
using survfuse::GeneModuleMembership;
using survfuse::GradientTape;
using survfuse::MlpParams;
using survfuse::NoGradGuard;
using survfuse::PatchFeatureSet;
using survfuse::Rng;
using survfuse::Shape;
using survfuse::synth_cohort;
using survfuse::SynthCohort;
using survfuse::SynthConfig;
using survfuse::Tensor;
using testutil::close;
using testutil::rand_tensor;

namespace {

PatchFeatureSet make_set(Tensor patches) {
  PatchFeatureSet set;
  set.patient_id = "p0";
  set.patches = std::move(patches);
  return set;
}

FcnParams make_fcn(GradientTape& tape, Rng& rng, std::size_t d,
                   std::size_t d_k) {
  FcnParams fcn;
  fcn.w = tape.parameter(rand_tensor(d, d_k, rng, 0.5));
  fcn.b = tape.parameter(rand_tensor(1, d_k, rng, 0.1));
  return fcn;
}

MlpParams make_module_mlp(GradientTape& tape, Rng& rng, std::size_t in,
                          std::size_t hidden, std::size_t out) {
  MlpParams mlp;
  mlp.w1 = tape.parameter(rand_tensor(in, hidden, rng, 0.5));
  mlp.b1 = tape.parameter(rand_tensor(1, hidden, rng, 0.1));
  mlp.w2 = tape.parameter(rand_tensor(hidden, out, rng, 0.5));
  mlp.b2 = tape.parameter(rand_tensor(1, out, rng, 0.1));
  mlp.activation = survfuse::Activation::relu;
  return mlp;
}

}  // namespace

TEST_CASE("one patch encodes to the rectified affine image") {
  FcnParams fcn;
  fcn.w = Tensor::matrix(2, 2, {1, -1, 2, 1});
  fcn.b = Tensor::row({0.5, -4.0});
  PatchFeatureSet set = make_set(Tensor::matrix(1, 2, {1.0, 2.0}));
  FeatureBag bag = encode_phenotypes(set, {0}, 1, fcn);
  REQUIRE(bag.phenotypes.rows() == 1);
  REQUIRE(bag.phenotypes.at(0, 0) == 5.5);
  REQUIRE(bag.phenotypes.at(0, 1) == 0.0);
  REQUIRE(bag.patch_counts == std::vector<std::size_t>{1});
}

TEST_CASE("duplicated patches do not move the phenotype mean") {
  Rng rng(31);
  GradientTape tape;
  FcnParams fcn = make_fcn(tape, rng, 3, 2);
  NoGradGuard guard(tape);
  Tensor one = rand_tensor(1, 3, rng);
  Tensor two = Tensor::matrix(
      2, 3, {one.at(0, 0), one.at(0, 1), one.at(0, 2),  //
             one.at(0, 0), one.at(0, 1), one.at(0, 2)});
  FeatureBag a = encode_phenotypes(make_set(one), {0}, 1, fcn);
  FeatureBag b = encode_phenotypes(make_set(two), {0, 0}, 1, fcn);
  for (std::size_t j = 0; j < 2; ++j) {
    REQUIRE(a.phenotypes.at(0, j) == b.phenotypes.at(0, j));
  }
}

TEST_CASE("rectification happens per patch, before averaging") {
  FcnParams fcn;
  fcn.w = Tensor::matrix(1, 1, {1.0});
  fcn.b = Tensor::row({0.0});
  PatchFeatureSet set = make_set(Tensor::matrix(2, 1, {2.0, -2.0}));
  FeatureBag bag = encode_phenotypes(set, {0, 0}, 1, fcn);
  REQUIRE(bag.phenotypes.at(0, 0) == 1.0);
}

TEST_CASE("phenotype vectors ignore patch order bit-for-bit") {
  Rng rng(32);
  GradientTape tape;
  FcnParams fcn = make_fcn(tape, rng, 4, 3);
  NoGradGuard guard(tape);
  Tensor patches = rand_tensor(7, 4, rng);
  const std::vector<std::size_t> assignment = {0, 1, 0, 1, 1, 0, 1};

  const std::vector<std::size_t> perm = {6, 2, 0, 4, 5, 1, 3};
  Tensor shuffled{Shape{7, 4}};
  std::vector<std::size_t> shuffled_assignment(7);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      shuffled.at(i, j) = patches.at(perm[i], j);
    }
    shuffled_assignment[i] = assignment[perm[i]];
  }

  FeatureBag a = encode_phenotypes(make_set(patches), assignment, 2, fcn);
  FeatureBag b =
      encode_phenotypes(make_set(shuffled), shuffled_assignment, 2, fcn);
  REQUIRE(a.patch_counts == b.patch_counts);
  for (std::size_t i = 0; i < a.phenotypes.size(); ++i) {
    REQUIRE(a.phenotypes.data()[i] == b.phenotypes.data()[i]);
  }
}

TEST_CASE("phenotype encoding validates its inputs") {
  Rng rng(33);
  GradientTape tape;
  FcnParams fcn = make_fcn(tape, rng, 3, 2);
  NoGradGuard guard(tape);
  Tensor patches = rand_tensor(4, 3, rng);
  REQUIRE_THROWS_AS(encode_phenotypes(make_set(patches), {0, 0, 0}, 1, fcn),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      encode_phenotypes(make_set(patches), {0, 0, 0, 2}, 2, fcn),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      encode_phenotypes(make_set(patches), {0, 0, 0, 0}, 2, fcn),
      std::invalid_argument);
  Tensor narrow = rand_tensor(4, 2, rng);
  REQUIRE_THROWS_AS(
      encode_phenotypes(make_set(narrow), {0, 0, 0, 0}, 1, fcn),
      std::invalid_argument);
}

TEST_CASE("phenotype encoder gradients match finite differences") {
  Rng rng(34);
  GradientTape tape;
  FcnParams fcn = make_fcn(tape, rng, 3, 2);
  Tensor patches = rand_tensor(5, 3, rng);
  const std::vector<std::size_t> assignment = {0, 1, 1, 0, 1};

  auto forward = [&]() {
    FeatureBag bag = encode_phenotypes(make_set(patches), assignment, 2, fcn);
    return survfuse::sum_all(survfuse::mul(bag.phenotypes, bag.phenotypes));
  };
  tape.zero_grad();
  Tensor loss = forward();
  tape.backward(loss);
  auto value = [&]() {
    NoGradGuard guard(tape);
    return forward().value();
  };
  for (Tensor& p : tape.parameters()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      REQUIRE(close(p.grad()[i], survfuse::fd_partial(value, p, i, 1e-5),
                    1e-6));
    }
  }
  tape.clear_nodes();
}

TEST_CASE("perfectly correlated gene groups form pure modules") {
  const std::size_t patients = 10;
  Rng rng(35);
  Tensor expr{Shape{patients, 6}};
  for (std::size_t p = 0; p < patients; ++p) {
    const double f = rng.normal();
    const double h = rng.normal();
    for (std::size_t g = 0; g < 3; ++g) {
      expr.at(p, g) = (1.0 + static_cast<double>(g)) * f + 0.2 * g;
      expr.at(p, g + 3) = (2.0 - 0.3 * static_cast<double>(g)) * h - 1.0;
    }
  }
  GeneModuleMembership membership = cluster_genes(expr, 2, 99);
  survfuse::validate_membership(membership, 6);
  std::vector<std::vector<std::size_t>> want = {{0, 1, 2}, {3, 4, 5}};
  std::sort(membership.modules.begin(), membership.modules.end());
  REQUIRE(membership.modules == want);
  REQUIRE(membership.warnings.empty());
}

TEST_CASE("module count equal to gene count yields singletons") {
  Rng rng(36);
  Tensor expr = rand_tensor(5, 4, rng);
  GeneModuleMembership membership = cluster_genes(expr, 4, 5);
  survfuse::validate_membership(membership, 4);
  for (const auto& module : membership.modules) {
    REQUIRE(module.size() == 1);
  }
}

TEST_CASE("planted three-block structure is recovered with high purity") {
  const std::size_t patients = 40, per_block = 6;
  Rng rng(37);
  Tensor expr{Shape{patients, 3 * per_block}};
  for (std::size_t p = 0; p < patients; ++p) {
    const double factors[3] = {rng.normal(), rng.normal(), rng.normal()};
    for (std::size_t g = 0; g < 3 * per_block; ++g) {
      expr.at(p, g) = factors[g / per_block] + 0.3 * rng.normal();
    }
  }
  GeneModuleMembership membership = cluster_genes(expr, 3, 11);
  survfuse::validate_membership(membership, 3 * per_block);

  std::size_t majority_total = 0;
  for (const auto& module : membership.modules) {
    std::size_t block_counts[3] = {0, 0, 0};
    for (const std::size_t g : module) ++block_counts[g / per_block];
    majority_total += *std::max_element(block_counts, block_counts + 3);
  }
  const double purity =
      static_cast<double>(majority_total) / (3.0 * per_block);
  REQUIRE(purity >= 0.9);
}

TEST_CASE("constant genes are flagged and still assigned") {
  Rng rng(38);
  Tensor expr = rand_tensor(6, 5, rng);
  for (std::size_t p = 0; p < 6; ++p) expr.at(p, 2) = 4.25;
  GeneModuleMembership membership = cluster_genes(expr, 2, 3);
  survfuse::validate_membership(membership, 5);
  REQUIRE(membership.warnings.size() == 1);
  REQUIRE(membership.warnings[0].find("gene 2") != std::string::npos);
}

TEST_CASE("gene clustering is deterministic and validates inputs") {
  Rng rng(39);
  Tensor expr = rand_tensor(8, 10, rng);
  GeneModuleMembership a = cluster_genes(expr, 4, 21);
  GeneModuleMembership b = cluster_genes(expr, 4, 21);
  REQUIRE(a.modules == b.modules);
  Tensor single = rand_tensor(1, 10, rng);
  REQUIRE_THROWS_AS(cluster_genes(single, 2, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(cluster_genes(expr, 11, 1), std::invalid_argument);
}

TEST_CASE("zero expression through zero-bias module MLPs is zero") {
  Rng rng(40);
  GradientTape tape;
  GeneModuleMembership membership;
  membership.modules = {{0, 2}, {1, 3, 4}};
  std::vector<MlpParams> mlps;
  mlps.push_back(make_module_mlp(tape, rng, 2, 4, 3));
  mlps.push_back(make_module_mlp(tape, rng, 3, 4, 3));
  for (MlpParams& mlp : mlps) {
    std::fill(mlp.b1.data().begin(), mlp.b1.data().end(), 0.0);
    std::fill(mlp.b2.data().begin(), mlp.b2.data().end(), 0.0);
  }
  NoGradGuard guard(tape);
  auto set = encode_gene_modules(std::vector<double>(5, 0.0), membership, mlps);
  REQUIRE(set.modules.rows() == 2);
  REQUIRE(set.modules.cols() == 3);
  for (const double v : set.modules.data()) REQUIRE(v == 0.0);
}

TEST_CASE("identical expression rows embed identically") {
  Rng rng(41);
  GradientTape tape;
  GeneModuleMembership membership;
  membership.modules = {{0, 3}, {1, 2}};
  std::vector<MlpParams> mlps = {make_module_mlp(tape, rng, 2, 4, 3),
                                 make_module_mlp(tape, rng, 2, 4, 3)};
  NoGradGuard guard(tape);
  const std::vector<double> row = {0.3, -1.2, 0.8, 2.0};
  auto a = encode_gene_modules(row, membership, mlps);
  auto b = encode_gene_modules(row, membership, mlps);
  for (std::size_t i = 0; i < a.modules.size(); ++i) {
    REQUIRE(a.modules.data()[i] == b.modules.data()[i]);
  }
}

TEST_CASE("module embedding gradients match finite differences") {
  Rng rng(42);
  GradientTape tape;
  GeneModuleMembership membership;
  membership.modules = {{0, 2, 4}, {1, 3}};
  std::vector<MlpParams> mlps = {make_module_mlp(tape, rng, 3, 4, 2),
                                 make_module_mlp(tape, rng, 2, 4, 2)};
  const std::vector<double> row = {0.5, -0.4, 1.1, 0.2, -0.9};

  auto forward = [&]() {
    auto set = encode_gene_modules(row, membership, mlps);
    return survfuse::sum_all(survfuse::mul(set.modules, set.modules));
  };
  tape.zero_grad();
  Tensor loss = forward();
  tape.backward(loss);
  auto value = [&]() {
    NoGradGuard guard(tape);
    return forward().value();
  };
  for (Tensor& p : tape.parameters()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      REQUIRE(close(p.grad()[i], survfuse::fd_partial(value, p, i, 1e-5),
                    1e-6));
    }
  }
  tape.clear_nodes();
}

TEST_CASE("module embedding validates membership and MLP counts") {
  Rng rng(43);
  GradientTape tape;
  GeneModuleMembership membership;
  membership.modules = {{0, 9}};
  std::vector<MlpParams> mlps = {make_module_mlp(tape, rng, 2, 4, 3)};
  NoGradGuard guard(tape);
  const std::vector<double> row = {1.0, 2.0, 3.0};
  REQUIRE_THROWS_AS(encode_gene_modules(row, membership, mlps),
                    std::invalid_argument);
  membership.modules = {{0, 1}, {2}};
  REQUIRE_THROWS_AS(encode_gene_modules(row, membership, mlps),
                    std::invalid_argument);
}

TEST_CASE("uncensored synthetic cohorts have only events") {
  SynthConfig config;
  config.patients = 40;
  config.genes = 16;
  config.clusters = 4;
  config.patch_dim = 8;
  config.censoring_rate = 0.0;
  SynthCohort cohort = synth_cohort(config);
  REQUIRE(cohort.records.size() == 40);
  for (const auto& record : cohort.records) {
    REQUIRE(record.event == 1);
    REQUIRE(record.time > 0.0);
  }
}

TEST_CASE("realized censoring tracks the requested rate") {
  SynthConfig config;
  config.patients = 400;
  config.genes = 16;
  config.clusters = 4;
  config.patch_dim = 8;
  config.censoring_rate = 0.35;
  config.seed = 17;
  SynthCohort cohort = synth_cohort(config);
  std::size_t censored = 0;
  for (const auto& record : cohort.records) censored += record.event == 0;
  const double fraction = static_cast<double>(censored) / 400.0;
  REQUIRE(std::abs(fraction - 0.35) < 0.1);
}

TEST_CASE("synthetic cohorts are deterministic and well-shaped") {
  SynthConfig config;
  config.patients = 25;
  config.genes = 12;
  config.clusters = 3;
  config.patch_dim = 6;
  config.patches_min = 4;
  config.patches_max = 9;
  SynthCohort a = synth_cohort(config);
  SynthCohort b = synth_cohort(config);
  REQUIRE(a.expression.rows() == 25);
  REQUIRE(a.expression.cols() == 12);
  REQUIRE(a.gene_symbols.size() == 12);
  for (std::size_t i = 0; i < 25; ++i) {
    REQUIRE(a.patch_sets[i].patches.rows() >= 4);
    REQUIRE(a.patch_sets[i].patches.rows() <= 9);
    REQUIRE(a.patch_sets[i].patches.cols() == 6);
    REQUIRE(a.records[i].time == b.records[i].time);
    REQUIRE(a.records[i].event == b.records[i].event);
    REQUIRE(a.latent_risk[i] == b.latent_risk[i]);
  }
  for (std::size_t i = 0; i < a.expression.size(); ++i) {
    REQUIRE(a.expression.data()[i] == b.expression.data()[i]);
  }
}

TEST_CASE("a strong effect separates the latent groups") {
  SynthConfig config;
  config.patients = 200;
  config.genes = 24;
  config.clusters = 4;
  config.patch_dim = 8;
  config.effect = 3.0;
  config.censoring_rate = 0.2;
  config.seed = 23;
  SynthCohort cohort = synth_cohort(config);

  // Group label as risk, scored over the pairs it can order (cross-group).
  std::size_t comparable = 0, concordant = 0;
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    if (cohort.records[i].event != 1) continue;
    for (std::size_t j = 0; j < cohort.records.size(); ++j) {
      if (cohort.records[j].time <= cohort.records[i].time) continue;
      if (cohort.group[i] == cohort.group[j]) continue;
      ++comparable;
      concordant += cohort.group[i] > cohort.group[j];
    }
  }
  REQUIRE(comparable > 0);
  const double label_c =
      static_cast<double>(concordant) / static_cast<double>(comparable);
  REQUIRE(label_c > 0.85);

  // The continuous generator risk is tie-free and must also order survival.
  std::vector<double> risks = cohort.latent_risk;
  const auto result = survfuse::c_index(risks, cohort.records);
  REQUIRE(result.c_index > 0.85);
}

TEST_CASE("a null effect carries no survival signal") {
  SynthConfig config;
  config.patients = 200;
  config.genes = 24;
  config.clusters = 4;
  config.patch_dim = 8;
  config.effect = 0.0;
  config.censoring_rate = 0.2;
  config.seed = 29;
  SynthCohort cohort = synth_cohort(config);
  for (const double z : cohort.latent_risk) REQUIRE(z == 0.0);

  std::size_t comparable = 0, concordant = 0;
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    if (cohort.records[i].event != 1) continue;
    for (std::size_t j = 0; j < cohort.records.size(); ++j) {
      if (cohort.records[j].time <= cohort.records[i].time) continue;
      if (cohort.group[i] == cohort.group[j]) continue;
      ++comparable;
      concordant += cohort.group[i] > cohort.group[j];
    }
  }
  const double label_c =
      static_cast<double>(concordant) / static_cast<double>(comparable);
  REQUIRE(std::abs(label_c - 0.5) < 0.1);
}

TEST_CASE("synthetic config validation") {
  SynthConfig config;
  config.censoring_rate = 1.0;
  REQUIRE_THROWS_AS(synth_cohort(config), std::invalid_argument);
  config.censoring_rate = 0.2;
  config.patients = 0;
  REQUIRE_THROWS_AS(synth_cohort(config), std::invalid_argument);
  config.patients = 10;
  config.patches_min = 5;
  config.patches_max = 4;
  REQUIRE_THROWS_AS(synth_cohort(config), std::invalid_argument);
}
