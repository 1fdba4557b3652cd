// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <survfuse/checkpoint.hpp>
#include <survfuse/config.hpp>
#include <survfuse/dataset.hpp>
#include <survfuse/model.hpp>
#include <survfuse/synth.hpp>

#include "helpers.hpp"

using survfuse::Checkpoint;
using survfuse::config_from_json;
using survfuse::config_to_json;
using survfuse::Dataset;
using survfuse::GeneModuleMembership;
using survfuse::load_checkpoint;
using survfuse::load_dataset;
using survfuse::load_patch_file;
using survfuse::model_from_checkpoint;
using survfuse::NoGradGuard;
using survfuse::parse_config;
using survfuse::PatchFeatureSet;
using survfuse::RunConfig;
using survfuse::save_checkpoint;
using survfuse::save_dataset;
using survfuse::Shape;
using survfuse::SurvivalModel;
using survfuse::synth_cohort;
using survfuse::SynthCohort;
using survfuse::SynthConfig;
using survfuse::Tensor;
using survfuse::validate_config;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("survfuse_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

SynthCohort small_cohort() {
  SynthConfig config;
  config.patients = 6;
  config.clusters = 2;
  config.patch_dim = 3;
  config.genes = 5;
  config.patches_min = 3;
  config.patches_max = 5;
  config.seed = 51;
  return synth_cohort(config);
}

RunConfig tiny_config() {
  RunConfig config;
  config.clusters = 2;
  config.patch_dim = 3;
  config.feature_dim = 4;
  config.model_dim = 4;
  config.heads = 2;
  config.depth = 2;
  config.pool_heads = 1;
  config.gene_mlp_hidden = 3;
  config.head_hidden1 = 5;
  config.head_hidden2 = 4;
  return config;
}

GeneModuleMembership tiny_membership() {
  GeneModuleMembership membership;
  membership.modules = {{0, 2, 4}, {1, 3}};
  return membership;
}

}  // namespace

TEST_CASE("run config survives a JSON round trip unchanged") {
  RunConfig config;
  config.seed = 123;
  config.model_dim = 24;
  config.heads = 3;
  config.pool_ratio = 0.9;
  config.learning_rate = 3e-3;
  config.half_credit_ties = true;
  config.dataset_dir = "data/in";
  config.synth.effect = 1.25;
  config.synth.patients = 33;

  const RunConfig round = config_from_json(config_to_json(config));
  REQUIRE(round.seed == config.seed);
  REQUIRE(round.model_dim == config.model_dim);
  REQUIRE(round.heads == config.heads);
  REQUIRE(round.pool_ratio == config.pool_ratio);
  REQUIRE(round.learning_rate == config.learning_rate);
  REQUIRE(round.half_credit_ties == config.half_credit_ties);
  REQUIRE(round.dataset_dir == config.dataset_dir);
  REQUIRE(round.synth.effect == config.synth.effect);
  REQUIRE(round.synth.patients == config.synth.patients);
  REQUIRE(config_to_json(round) == config_to_json(config));
}

TEST_CASE("partial configs inherit defaults and typos are rejected") {
  const RunConfig config = parse_config(R"({"model_dim": 16, "heads": 2})");
  REQUIRE(config.model_dim == 16);
  REQUIRE(config.heads == 2);
  REQUIRE(config.learning_rate == 1e-4);
  REQUIRE(config.weight_decay == 5e-4);
  REQUIRE(config.patience == 15);
  REQUIRE(config.folds == 5);
  REQUIRE(config.pool_ratio == 0.5);

  REQUIRE_THROWS_AS(parse_config(R"({"learning_rte": 0.1})"),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(parse_config(R"({"synth": {"genez": 4}})"),
                    std::invalid_argument);
}

TEST_CASE("config validation rejects inconsistent settings") {
  RunConfig config;
  config.folds = 1;
  REQUIRE_THROWS_AS(validate_config(config), std::invalid_argument);
  config = RunConfig{};
  config.pool_ratio = 0.0;
  REQUIRE_THROWS_AS(validate_config(config), std::invalid_argument);
  config = RunConfig{};
  config.model_dim = 30;
  config.heads = 4;
  REQUIRE_THROWS_AS(validate_config(config), std::invalid_argument);
  config = RunConfig{};
  config.patience = 0;
  REQUIRE_THROWS_AS(validate_config(config), std::invalid_argument);
}

TEST_CASE("a saved cohort loads back exactly") {
  const fs::path dir = temp_dir("roundtrip");
  const SynthCohort cohort = small_cohort();
  save_dataset(dir.string(), cohort);
  const Dataset dataset = load_dataset(dir.string());

  REQUIRE(dataset.patients.size() == cohort.patch_sets.size());
  REQUIRE(dataset.gene_symbols == cohort.gene_symbols);
  REQUIRE(dataset.warnings.empty());
  for (std::size_t i = 0; i < dataset.patients.size(); ++i) {
    const auto& patient = dataset.patients[i];
    REQUIRE(patient.id == cohort.patch_sets[i].patient_id);
    REQUIRE(patient.record.time == cohort.records[i].time);
    REQUIRE(patient.record.event == cohort.records[i].event);
    REQUIRE(patient.patches.shape() == cohort.patch_sets[i].patches.shape());
    for (std::size_t v = 0; v < patient.patches.size(); ++v) {
      REQUIRE(patient.patches.data()[v] ==
              cohort.patch_sets[i].patches.data()[v]);
    }
    for (std::size_t g = 0; g < patient.expression.size(); ++g) {
      REQUIRE(patient.expression[g] == cohort.expression.at(i, g));
    }
  }
}

TEST_CASE("patients with missing modalities are excluded with warnings") {
  const fs::path dir = temp_dir("exclusions");
  const SynthCohort cohort = small_cohort();
  save_dataset(dir.string(), cohort);

  fs::remove(dir / "patches" / (cohort.patch_sets[1].patient_id + ".txt"));
  {
    std::ifstream in(dir / "expression.tsv");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    const std::string needle = cohort.patch_sets[3].patient_id + "\t";
    const std::size_t start = text.find("\n" + needle);
    REQUIRE(start != std::string::npos);
    const std::size_t end = text.find('\n', start + 1);
    text.erase(start, end - start);
    std::ofstream out(dir / "expression.tsv");
    out << text;
  }

  const Dataset dataset = load_dataset(dir.string());
  REQUIRE(dataset.patients.size() == cohort.patch_sets.size() - 2);
  REQUIRE(dataset.warnings.size() == 2);
  std::set<std::string> kept;
  for (const auto& patient : dataset.patients) kept.insert(patient.id);
  REQUIRE(kept.count(cohort.patch_sets[1].patient_id) == 0);
  REQUIRE(kept.count(cohort.patch_sets[3].patient_id) == 0);
}

TEST_CASE("manifest comments are skipped and bad rows are rejected") {
  const fs::path dir = temp_dir("manifest");
  const SynthCohort cohort = small_cohort();
  save_dataset(dir.string(), cohort);

  const Dataset dataset = load_dataset(dir.string());
  REQUIRE(dataset.patients.size() == cohort.patch_sets.size());

  std::ofstream manifest(dir / "manifest", std::ios::app);
  manifest << "bad_patient patches/none.txt 4.0 2\n";
  manifest.close();
  REQUIRE_THROWS_AS(load_dataset(dir.string()), std::invalid_argument);
}

TEST_CASE("patch files validate their header and payload") {
  const fs::path dir = temp_dir("patchfile");
  {
    std::ofstream out(dir / "bad_header.txt");
    out << "not numbers\n";
  }
  REQUIRE_THROWS_AS(load_patch_file((dir / "bad_header.txt").string()),
                    std::invalid_argument);
  {
    std::ofstream out(dir / "truncated.txt");
    out << "3 2\n1 2 3\n4 5\n";
  }
  REQUIRE_THROWS_AS(load_patch_file((dir / "truncated.txt").string()),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(load_patch_file((dir / "missing.txt").string()),
                    std::invalid_argument);
}

TEST_CASE("expression tables reject duplicate and ragged rows") {
  const fs::path dir = temp_dir("expression");
  {
    std::ofstream out(dir / "dup.tsv");
    out << "patient_id g1 g2\np0 1 2\np0 3 4\n";
  }
  REQUIRE_THROWS_AS(survfuse::load_expression((dir / "dup.tsv").string()),
                    std::invalid_argument);
  {
    std::ofstream out(dir / "short.tsv");
    out << "patient_id g1 g2\np0 1\n";
  }
  REQUIRE_THROWS_AS(survfuse::load_expression((dir / "short.tsv").string()),
                    std::invalid_argument);
  {
    std::ofstream out(dir / "long.tsv");
    out << "patient_id g1 g2\np0 1 2 3\n";
  }
  REQUIRE_THROWS_AS(survfuse::load_expression((dir / "long.tsv").string()),
                    std::invalid_argument);
}

TEST_CASE("the model registers uniquely named parameters in a fixed order") {
  SurvivalModel model(tiny_config(), tiny_membership(), 77);
  const auto& named = model.named_parameters();
  REQUIRE(named.size() == model.tape().parameters().size());

  // fcn 2; two module MLPs 8; projections 4; 2 levels x 4 blocks x 15
  // tensors + one reduce level of 4; one pool head per modality, 7 each;
  // head 6.
  REQUIRE(named.size() == 2 + 8 + 4 + (2 * 4 * 15 + 4) + 14 + 6);

  std::set<std::string> names;
  for (const auto& [name, tensor] : named) {
    REQUIRE(names.insert(name).second);
    REQUIRE(tensor.size() > 0);
  }
  REQUIRE(names.count("image_fcn.w") == 1);
  REQUIRE(names.count("gene_module.1.w2") == 1);
  REQUIRE(names.count("fusion.0.image_cross.attention.head1.wv") == 1);
  REQUIRE(names.count("fusion.0.gene_reduce.w") == 1);
  REQUIRE(names.count("fusion.1.image_reduce.w") == 0);
  REQUIRE(names.count("pool.gene.head0.q_mlp.w1") == 1);
  REQUIRE(names.count("head.w3") == 1);
}

TEST_CASE("model initialization is deterministic per seed") {
  SurvivalModel a(tiny_config(), tiny_membership(), 77);
  SurvivalModel b(tiny_config(), tiny_membership(), 77);
  SurvivalModel c(tiny_config(), tiny_membership(), 78);
  bool any_difference = false;
  for (std::size_t p = 0; p < a.named_parameters().size(); ++p) {
    const auto& [name_a, tensor_a] = a.named_parameters()[p];
    const auto& [name_b, tensor_b] = b.named_parameters()[p];
    REQUIRE(name_a == name_b);
    REQUIRE(tensor_a.data() == tensor_b.data());
    if (tensor_a.data() != c.named_parameters()[p].second.data()) {
      any_difference = true;
    }
  }
  REQUIRE(any_difference);
}

TEST_CASE("a forward pass produces a strictly bounded risk") {
  SurvivalModel model(tiny_config(), tiny_membership(), 12);
  NoGradGuard guard(model.tape());
  survfuse::Rng rng(13);
  PatchFeatureSet set;
  set.patient_id = "p";
  set.patches = testutil::rand_tensor(5, 3, rng);
  const std::vector<std::size_t> assignment = {0, 1, 0, 1, 1};
  const std::vector<double> expression = {0.2, -0.5, 1.0, 0.3, -1.2};
  const auto out = model.forward(set, assignment, expression);
  REQUIRE(out.risk.value() > 0.0);
  REQUIRE(out.risk.value() < 1.0);
  const auto again = model.forward(set, assignment, expression);
  REQUIRE(out.risk.value() == again.risk.value());
}

TEST_CASE("set_parameter rejects unknown names and wrong sizes") {
  SurvivalModel model(tiny_config(), tiny_membership(), 9);
  REQUIRE_THROWS_AS(model.set_parameter("no.such.tensor", {1.0}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(model.set_parameter("head.b3", {1.0, 2.0}),
                    std::invalid_argument);
}

TEST_CASE("checkpoints round-trip the model bit for bit") {
  const fs::path dir = temp_dir("checkpoint");
  SurvivalModel model(tiny_config(), tiny_membership(), 41);
  const std::vector<std::string> symbols = {"G0", "G1", "G2", "G3", "G4"};
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(path, model, 17, 0.125, symbols);

  const Checkpoint checkpoint = load_checkpoint(path);
  REQUIRE(checkpoint.epoch == 17);
  REQUIRE(checkpoint.best_val_loss == 0.125);
  REQUIRE(checkpoint.gene_symbols == symbols);
  REQUIRE(checkpoint.membership.modules == tiny_membership().modules);
  REQUIRE(config_to_json(checkpoint.config) ==
          config_to_json(tiny_config()));

  SurvivalModel reloaded = model_from_checkpoint(checkpoint);
  REQUIRE(reloaded.named_parameters().size() ==
          model.named_parameters().size());
  for (std::size_t p = 0; p < model.named_parameters().size(); ++p) {
    REQUIRE(reloaded.named_parameters()[p].first ==
            model.named_parameters()[p].first);
    REQUIRE(reloaded.named_parameters()[p].second.data() ==
            model.named_parameters()[p].second.data());
  }

  survfuse::Rng rng(14);
  PatchFeatureSet set;
  set.patient_id = "p";
  set.patches = testutil::rand_tensor(6, 3, rng);
  const std::vector<std::size_t> assignment = {0, 0, 1, 1, 0, 1};
  const std::vector<double> expression = {1.0, 0.0, -0.7, 0.4, 2.2};
  NoGradGuard guard_a(model.tape());
  NoGradGuard guard_b(reloaded.tape());
  REQUIRE(model.forward(set, assignment, expression).risk.value() ==
          reloaded.forward(set, assignment, expression).risk.value());

  const std::string again = (dir / "model2.ckpt").string();
  save_checkpoint(again, reloaded, 17, 0.125, symbols);
  REQUIRE(read_bytes(path) == read_bytes(again));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = temp_dir("badckpt");
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "some-other-format v9\n";
  }
  REQUIRE_THROWS_AS(load_checkpoint((dir / "bad.ckpt").string()),
                    std::invalid_argument);
  SurvivalModel model(tiny_config(), tiny_membership(), 8);
  const std::string path = (dir / "trunc.ckpt").string();
  save_checkpoint(path, model, 1, 2.0, {"A", "B", "C", "D", "E"});
  std::string bytes = read_bytes(path);
  bytes.resize(bytes.size() - 9);
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
  }
  REQUIRE_THROWS_AS(load_checkpoint(path), std::invalid_argument);
}
