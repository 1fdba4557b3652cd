// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "synth.hpp"
#include "tensor.hpp"

namespace survfuse {

// Full run description: model dimensions, optimizer settings, cross-validation
// layout, evaluation conventions, and the synthetic-cohort block used by the
// `synth` subcommand.
struct RunConfig {
  std::uint64_t seed = 7;

  // Model.
  std::size_t clusters = 8;       // phenotype/module count C
  std::size_t patch_dim = 32;     // incoming patch feature width d
  std::size_t feature_dim = 16;   // encoded phenotype/module width d_k
  std::size_t model_dim = 32;     // transformer width
  std::size_t heads = 4;          // attention heads per block
  std::size_t depth = 2;          // fusion levels
  std::size_t pool_heads = 2;
  double pool_ratio = 0.5;
  bool pool_renormalize = false;
  std::size_t gene_mlp_hidden = 32;
  std::size_t head_hidden1 = 64;
  std::size_t head_hidden2 = 32;
  std::size_t block_mlp_scale = 2;  // transformer MLP hidden = scale * model_dim
  bool sigmoid_risk = true;

  // Optimization.
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool decoupled_decay = false;
  std::size_t patience = 15;
  std::size_t max_epochs = 300;

  // Cross-validation and evaluation.
  std::size_t folds = 5;
  double validation_fraction = 0.25;
  bool half_credit_ties = false;

  // Paths.
  std::string dataset_dir;
  std::string out_dir;

  SynthConfig synth;
};

inline void validate_config(const RunConfig& config) {
  require(config.clusters >= 1, "config: clusters must be positive");
  require(config.patch_dim >= 1, "config: patch_dim must be positive");
  require(config.feature_dim >= 1, "config: feature_dim must be positive");
  require(config.model_dim >= 1, "config: model_dim must be positive");
  require(config.heads >= 1, "config: heads must be positive");
  require(config.model_dim % config.heads == 0,
          "config: model_dim " + std::to_string(config.model_dim) +
              " is not divisible by heads " + std::to_string(config.heads));
  require(config.depth >= 1, "config: depth must be at least 1");
  require(config.pool_heads >= 1, "config: pool_heads must be positive");
  require(config.pool_ratio > 0.0 && config.pool_ratio <= 1.0,
          "config: pool_ratio must lie in (0, 1]");
  require(config.gene_mlp_hidden >= 1 && config.head_hidden1 >= 1 &&
              config.head_hidden2 >= 1 && config.block_mlp_scale >= 1,
          "config: hidden widths must be positive");
  require(config.learning_rate > 0.0, "config: learning_rate must be positive");
  require(config.weight_decay >= 0.0,
          "config: weight_decay must be non-negative");
  require(config.patience >= 1, "config: patience must be at least 1");
  require(config.max_epochs >= 1, "config: max_epochs must be positive");
  require(config.folds >= 2, "config: folds must be at least 2");
  require(config.validation_fraction > 0.0 && config.validation_fraction < 1.0,
          "config: validation_fraction must lie in (0, 1)");
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json synth_to_json(const SynthConfig& synth) {
  return nlohmann::json{{"patients", synth.patients},
                        {"clusters", synth.clusters},
                        {"patch_dim", synth.patch_dim},
                        {"genes", synth.genes},
                        {"patches_min", synth.patches_min},
                        {"patches_max", synth.patches_max},
                        {"effect", synth.effect},
                        {"censoring_rate", synth.censoring_rate},
                        {"base_hazard", synth.base_hazard},
                        {"seed", synth.seed}};
}

inline nlohmann::json config_to_json(const RunConfig& config) {
  return nlohmann::json{{"seed", config.seed},
                        {"clusters", config.clusters},
                        {"patch_dim", config.patch_dim},
                        {"feature_dim", config.feature_dim},
                        {"model_dim", config.model_dim},
                        {"heads", config.heads},
                        {"depth", config.depth},
                        {"pool_heads", config.pool_heads},
                        {"pool_ratio", config.pool_ratio},
                        {"pool_renormalize", config.pool_renormalize},
                        {"gene_mlp_hidden", config.gene_mlp_hidden},
                        {"head_hidden1", config.head_hidden1},
                        {"head_hidden2", config.head_hidden2},
                        {"block_mlp_scale", config.block_mlp_scale},
                        {"sigmoid_risk", config.sigmoid_risk},
                        {"learning_rate", config.learning_rate},
                        {"weight_decay", config.weight_decay},
                        {"beta1", config.beta1},
                        {"beta2", config.beta2},
                        {"adam_epsilon", config.adam_epsilon},
                        {"decoupled_decay", config.decoupled_decay},
                        {"patience", config.patience},
                        {"max_epochs", config.max_epochs},
                        {"folds", config.folds},
                        {"validation_fraction", config.validation_fraction},
                        {"half_credit_ties", config.half_credit_ties},
                        {"dataset_dir", config.dataset_dir},
                        {"out_dir", config.out_dir},
                        {"synth", synth_to_json(config.synth)}};
}

// Missing keys keep their defaults; unknown keys are rejected so typos cannot
// silently fall back to defaults.
inline RunConfig config_from_json(const nlohmann::json& j) {
  static const nlohmann::json known = config_to_json(RunConfig{});
  require(j.is_object(), "config: document root must be a JSON object");
  for (const auto& item : j.items()) {
    require(known.contains(item.key()),
            "config: unknown key '" + item.key() + "'");
  }
  RunConfig config;
  detail::read_key(j, "seed", config.seed);
  detail::read_key(j, "clusters", config.clusters);
  detail::read_key(j, "patch_dim", config.patch_dim);
  detail::read_key(j, "feature_dim", config.feature_dim);
  detail::read_key(j, "model_dim", config.model_dim);
  detail::read_key(j, "heads", config.heads);
  detail::read_key(j, "depth", config.depth);
  detail::read_key(j, "pool_heads", config.pool_heads);
  detail::read_key(j, "pool_ratio", config.pool_ratio);
  detail::read_key(j, "pool_renormalize", config.pool_renormalize);
  detail::read_key(j, "gene_mlp_hidden", config.gene_mlp_hidden);
  detail::read_key(j, "head_hidden1", config.head_hidden1);
  detail::read_key(j, "head_hidden2", config.head_hidden2);
  detail::read_key(j, "block_mlp_scale", config.block_mlp_scale);
  detail::read_key(j, "sigmoid_risk", config.sigmoid_risk);
  detail::read_key(j, "learning_rate", config.learning_rate);
  detail::read_key(j, "weight_decay", config.weight_decay);
  detail::read_key(j, "beta1", config.beta1);
  detail::read_key(j, "beta2", config.beta2);
  detail::read_key(j, "adam_epsilon", config.adam_epsilon);
  detail::read_key(j, "decoupled_decay", config.decoupled_decay);
  detail::read_key(j, "patience", config.patience);
  detail::read_key(j, "max_epochs", config.max_epochs);
  detail::read_key(j, "folds", config.folds);
  detail::read_key(j, "validation_fraction", config.validation_fraction);
  detail::read_key(j, "half_credit_ties", config.half_credit_ties);
  detail::read_key(j, "dataset_dir", config.dataset_dir);
  detail::read_key(j, "out_dir", config.out_dir);
  if (j.contains("synth")) {
    const nlohmann::json& s = j.at("synth");
    static const nlohmann::json known_synth = synth_to_json(SynthConfig{});
    for (const auto& item : s.items()) {
      require(known_synth.contains(item.key()),
              "config: unknown synth key '" + item.key() + "'");
    }
    detail::read_key(s, "patients", config.synth.patients);
    detail::read_key(s, "clusters", config.synth.clusters);
    detail::read_key(s, "patch_dim", config.synth.patch_dim);
    detail::read_key(s, "genes", config.synth.genes);
    detail::read_key(s, "patches_min", config.synth.patches_min);
    detail::read_key(s, "patches_max", config.synth.patches_max);
    detail::read_key(s, "effect", config.synth.effect);
    detail::read_key(s, "censoring_rate", config.synth.censoring_rate);
    detail::read_key(s, "base_hazard", config.synth.base_hazard);
    detail::read_key(s, "seed", config.synth.seed);
  }
  validate_config(config);
  return config;
}

inline RunConfig parse_config(const std::string& text) {
  return config_from_json(nlohmann::json::parse(text));
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return config_from_json(j);
}

inline std::string config_to_line(const RunConfig& config) {
  return config_to_json(config).dump();
}

inline void save_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "config: cannot write '" + path + "'");
  out << config_to_json(config).dump(2) << "\n";
}

}  // namespace survfuse
