// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "encoders.hpp"
#include "fusion.hpp"
#include "pooling.hpp"
#include "rng.hpp"
#include "survival.hpp"
#include "tensor.hpp"

namespace survfuse {

// The full pipeline as one trainable unit: shared patch encoder, per-module
// gene MLPs, per-modality input projections, the stacked two-stream fusion
// levels, per-modality attention pooling, and the risk head. Every parameter
// is registered on the model's own tape under a stable name, in a fixed
// order, so checkpoints are reproducible byte for byte.
class SurvivalModel {
 public:
  SurvivalModel(const RunConfig& config, GeneModuleMembership membership,
                std::uint64_t init_seed)
      : config_(config),
        membership_(std::move(membership)),
        tape_(std::make_unique<GradientTape>()),
        rng_(Rng::mix(init_seed, 0x6d6f64656cULL)) {
    validate_config(config_);
    require(membership_.module_count() == config_.clusters,
            "SurvivalModel: membership has " +
                std::to_string(membership_.module_count()) +
                " modules, config expects " + std::to_string(config_.clusters));
    build();
  }

  const RunConfig& config() const { return config_; }
  const GeneModuleMembership& membership() const { return membership_; }
  GradientTape& tape() { return *tape_; }
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
    return named_;
  }

  // Risk for one patient; records onto the tape when it is recording.
  RiskOutput forward(const PatchFeatureSet& patches,
                     const std::vector<std::size_t>& assignment,
                     const std::vector<double>& expression_row) const {
    FeatureBag bag =
        encode_phenotypes(patches, assignment, config_.clusters, fcn_);
    GeneModuleSet genes =
        encode_gene_modules(expression_row, membership_, module_mlps_);
    Tensor p0 = affine(bag.phenotypes, image_proj_w_, image_proj_b_);
    Tensor g0 = affine(genes.modules, gene_proj_w_, gene_proj_b_);
    auto [p_fused, g_fused] = tsmcat_forward(levels_, p0, g0);
    Tensor pooled_image = mhap_forward(image_pool_, p_fused);
    Tensor pooled_gene = mhap_forward(gene_pool_, g_fused);
    return mlp_head(head_, pooled_image, pooled_gene);
  }

  // Copies stored values into the named parameter, by checkpoint reload.
  void set_parameter(const std::string& name,
                     const std::vector<double>& values) {
    for (auto& [key, tensor] : named_) {
      if (key != name) continue;
      require(values.size() == tensor.size(),
              "SurvivalModel: parameter '" + name + "' holds " +
                  std::to_string(tensor.size()) + " values, got " +
                  std::to_string(values.size()));
      tensor.data() = values;
      return;
    }
    throw std::invalid_argument("SurvivalModel: unknown parameter '" + name +
                                "'");
  }

  std::size_t parameter_count() const { return tape_->parameter_count(); }

 private:
  enum class Init { fan_in, zero, one };

  Tensor reg(const std::string& name, std::size_t rows, std::size_t cols,
             Init kind) {
    Tensor t{Shape{rows, cols}};
    if (kind == Init::fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
      for (double& v : t.data()) v = rng_.uniform(-bound, bound);
    } else if (kind == Init::one) {
      std::fill(t.data().begin(), t.data().end(), 1.0);
    }
    Tensor p = tape_->parameter(t);
    named_.emplace_back(name, p);
    return p;
  }

  MlpParams reg_mlp(const std::string& prefix, std::size_t in,
                    std::size_t hidden, std::size_t out,
                    Activation activation) {
    MlpParams mlp;
    mlp.w1 = reg(prefix + ".w1", in, hidden, Init::fan_in);
    mlp.b1 = reg(prefix + ".b1", 1, hidden, Init::zero);
    mlp.w2 = reg(prefix + ".w2", hidden, out, Init::fan_in);
    mlp.b2 = reg(prefix + ".b2", 1, out, Init::zero);
    mlp.activation = activation;
    return mlp;
  }

  LayerNormParams reg_norm(const std::string& prefix, std::size_t width) {
    LayerNormParams norm;
    norm.gain = reg(prefix + ".gain", 1, width, Init::one);
    norm.offset = reg(prefix + ".offset", 1, width, Init::zero);
    return norm;
  }

  TransformerBlockParams reg_block(const std::string& prefix) {
    const std::size_t dm = config_.model_dim;
    const std::size_t dh = dm / config_.heads;
    TransformerBlockParams block;
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const std::string head = prefix + ".attention.head" + std::to_string(h);
      AttentionHeadParams params;
      params.wq = reg(head + ".wq", dm, dh, Init::fan_in);
      params.wk = reg(head + ".wk", dm, dh, Init::fan_in);
      params.wv = reg(head + ".wv", dm, dh, Init::fan_in);
      block.attention.heads.push_back(params);
    }
    block.attention.output =
        reg(prefix + ".attention.output", dm, dm, Init::fan_in);
    block.mlp = reg_mlp(prefix + ".mlp", dm, config_.block_mlp_scale * dm, dm,
                        Activation::gelu);
    block.norm1 = reg_norm(prefix + ".norm1", dm);
    block.norm2 = reg_norm(prefix + ".norm2", dm);
    return block;
  }

  PoolHeadParams reg_pool_head(const std::string& prefix) {
    const std::size_t d_in = 2 * config_.model_dim;
    const std::size_t d_att = d_in / 2;
    PoolHeadParams head;
    head.wq = reg(prefix + ".wq", d_in, d_in, Init::fan_in);
    head.q_mlp = reg_mlp(prefix + ".q_mlp", d_in, d_att, d_att,
                         Activation::gelu);
    head.wk = reg(prefix + ".wk", d_in, d_att, Init::fan_in);
    head.wv = reg(prefix + ".wv", d_in, d_in, Init::fan_in);
    return head;
  }

  void build() {
    fcn_.w = reg("image_fcn.w", config_.patch_dim, config_.feature_dim,
                 Init::fan_in);
    fcn_.b = reg("image_fcn.b", 1, config_.feature_dim, Init::zero);

    for (std::size_t m = 0; m < membership_.module_count(); ++m) {
      module_mlps_.push_back(
          reg_mlp("gene_module." + std::to_string(m),
                  membership_.modules[m].size(), config_.gene_mlp_hidden,
                  config_.feature_dim, Activation::relu));
    }

    image_proj_w_ = reg("image_proj.w", config_.feature_dim, config_.model_dim,
                        Init::fan_in);
    image_proj_b_ = reg("image_proj.b", 1, config_.model_dim, Init::zero);
    gene_proj_w_ = reg("gene_proj.w", config_.feature_dim, config_.model_dim,
                       Init::fan_in);
    gene_proj_b_ = reg("gene_proj.b", 1, config_.model_dim, Init::zero);

    for (std::size_t t = 0; t < config_.depth; ++t) {
      const std::string prefix = "fusion." + std::to_string(t);
      FusionLevelParams level;
      level.image_intra = reg_block(prefix + ".image_intra");
      level.gene_intra = reg_block(prefix + ".gene_intra");
      level.image_cross = reg_block(prefix + ".image_cross");
      level.gene_cross = reg_block(prefix + ".gene_cross");
      level.has_reduce = t + 1 < config_.depth;
      if (level.has_reduce) {
        level.image_reduce_w = reg(prefix + ".image_reduce.w",
                                   2 * config_.model_dim, config_.model_dim,
                                   Init::fan_in);
        level.image_reduce_b =
            reg(prefix + ".image_reduce.b", 1, config_.model_dim, Init::zero);
        level.gene_reduce_w = reg(prefix + ".gene_reduce.w",
                                  2 * config_.model_dim, config_.model_dim,
                                  Init::fan_in);
        level.gene_reduce_b =
            reg(prefix + ".gene_reduce.b", 1, config_.model_dim, Init::zero);
      }
      levels_.push_back(level);
    }

    for (std::size_t h = 0; h < config_.pool_heads; ++h) {
      image_pool_.heads.push_back(
          reg_pool_head("pool.image.head" + std::to_string(h)));
      gene_pool_.heads.push_back(
          reg_pool_head("pool.gene.head" + std::to_string(h)));
    }
    image_pool_.pool_ratio = config_.pool_ratio;
    image_pool_.renormalize = config_.pool_renormalize;
    gene_pool_.pool_ratio = config_.pool_ratio;
    gene_pool_.renormalize = config_.pool_renormalize;

    const std::size_t joint =
        2 * config_.pool_heads * (2 * config_.model_dim);
    head_.w1 = reg("head.w1", joint, config_.head_hidden1, Init::fan_in);
    head_.b1 = reg("head.b1", 1, config_.head_hidden1, Init::zero);
    head_.w2 = reg("head.w2", config_.head_hidden1, config_.head_hidden2,
                   Init::fan_in);
    head_.b2 = reg("head.b2", 1, config_.head_hidden2, Init::zero);
    head_.w3 = reg("head.w3", config_.head_hidden2, 1, Init::fan_in);
    head_.b3 = reg("head.b3", 1, 1, Init::zero);
    head_.sigmoid_output = config_.sigmoid_risk;
  }

  RunConfig config_;
  GeneModuleMembership membership_;
  std::unique_ptr<GradientTape> tape_;
  Rng rng_;
  std::vector<std::pair<std::string, Tensor>> named_;

  FcnParams fcn_;
  std::vector<MlpParams> module_mlps_;
  Tensor image_proj_w_, image_proj_b_, gene_proj_w_, gene_proj_b_;
  std::vector<FusionLevelParams> levels_;
  MhapParams image_pool_, gene_pool_;
  RiskHeadParams head_;
};

}  // namespace survfuse
