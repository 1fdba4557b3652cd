// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "layers.hpp"
#include "tensor.hpp"

namespace survfuse {

// One attention head's projections, each model_dim x head_dim.
struct AttentionHeadParams {
  Tensor wq, wk, wv;
};

// Multi-head attention with head_dim = model_dim / head count and a final
// (heads * head_dim) x model_dim output projection.
struct AttentionParams {
  std::vector<AttentionHeadParams> heads;
  Tensor output;

  std::size_t head_count() const { return heads.size(); }
  std::size_t model_dim() const { return heads.front().wq.rows(); }
  std::size_t head_dim() const { return heads.front().wq.cols(); }
};

inline void validate_attention(const AttentionParams& params,
                               const char* where) {
  require(!params.heads.empty(),
          std::string(where) + ": attention needs at least one head");
  const std::size_t dm = params.heads.front().wq.rows();
  const std::size_t dh = params.heads.front().wq.cols();
  require(dm == dh * params.heads.size(),
          std::string(where) +
              ": model dimension must equal head count times head dimension");
  for (const AttentionHeadParams& h : params.heads) {
    for (const Tensor* w : {&h.wq, &h.wk, &h.wv}) {
      require(w->rows() == dm && w->cols() == dh,
              std::string(where) + ": head projection must be " +
                  std::to_string(dm) + " x " + std::to_string(dh) + ", got " +
                  shape_str(w->shape()));
    }
  }
  require(params.output.rows() == dh * params.heads.size() &&
              params.output.cols() == dm,
          std::string(where) + ": output projection must be " +
              std::to_string(dh * params.heads.size()) + " x " +
              std::to_string(dm) + ", got " +
              shape_str(params.output.shape()));
}

// softmax(Q Kᵀ / sqrt(d)) V. When attention_out is given the row-stochastic
// attention matrix is exposed for inspection.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k,
                                   const Tensor& v,
                                   Tensor* attention_out = nullptr) {
  require(q.shape().size() == 2 && k.shape().size() == 2 &&
              v.shape().size() == 2,
          "scaled_dot_attention: operands must be matrices");
  require(q.cols() == k.cols(),
          "scaled_dot_attention: query width " + std::to_string(q.cols()) +
              " does not match key width " + std::to_string(k.cols()));
  require(k.rows() == v.rows(),
          "scaled_dot_attention: key count " + std::to_string(k.rows()) +
              " does not match value count " + std::to_string(v.rows()));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor att = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
  if (attention_out != nullptr) *attention_out = att;
  return matmul(att, v);
}

// Queries come from q_in, keys and values from kv_in; both carry model_dim
// columns. Intra-modal attention passes the same matrix for both.
inline Tensor multi_head_attention(const AttentionParams& params,
                                   const Tensor& q_in, const Tensor& kv_in) {
  validate_attention(params, "multi_head_attention");
  require(q_in.cols() == params.model_dim(),
          "multi_head_attention: query input width " +
              std::to_string(q_in.cols()) + " does not match model dim " +
              std::to_string(params.model_dim()));
  require(kv_in.cols() == params.model_dim(),
          "multi_head_attention: key/value input width " +
              std::to_string(kv_in.cols()) + " does not match model dim " +
              std::to_string(params.model_dim()));
  Tensor joined;
  for (const AttentionHeadParams& head : params.heads) {
    Tensor q = matmul(q_in, head.wq);
    Tensor k = matmul(kv_in, head.wk);
    Tensor v = matmul(kv_in, head.wv);
    Tensor sa = scaled_dot_attention(q, k, v);
    joined = joined.defined() ? concat_cols(joined, sa) : sa;
  }
  return matmul(joined, params.output);
}

// Post-norm block: attention, residual add, layer norm, MLP, residual add,
// layer norm. The MLP holds two affine layers with GELU between.
struct TransformerBlockParams {
  AttentionParams attention;
  MlpParams mlp;
  LayerNormParams norm1, norm2;
};

inline Tensor transformer_block(const TransformerBlockParams& params,
                                const Tensor& x, const Tensor& kv) {
  require(x.finite(), "transformer_block: input is not finite");
  Tensor attended = multi_head_attention(params.attention, x, kv);
  Tensor normed = layer_norm(params.norm1, add(x, attended));
  Tensor expanded = mlp_forward(params.mlp, normed);
  require(expanded.cols() == x.cols(),
          "transformer_block: MLP output width " +
              std::to_string(expanded.cols()) +
              " breaks residual compatibility with input width " +
              std::to_string(x.cols()));
  return layer_norm(params.norm2, add(normed, expanded));
}

inline Tensor transformer_block(const TransformerBlockParams& params,
                                const Tensor& x) {
  return transformer_block(params, x, x);
}

// K/V-swapped co-attention: the image stream queries the gene tokens and the
// gene stream queries the image tokens, each through its own block.
inline std::pair<Tensor, Tensor> co_attention_block(
    const TransformerBlockParams& image_params,
    const TransformerBlockParams& gene_params, const Tensor& p,
    const Tensor& g) {
  Tensor p_cross = transformer_block(image_params, p, g);
  Tensor g_cross = transformer_block(gene_params, g, p);
  return {p_cross, g_cross};
}

// One fusion level: per modality an intra-stream block and a cross-stream
// block whose outputs are concatenated on the feature axis. All levels except
// the last re-project 2 * model_dim back to model_dim for the next level.
struct FusionLevelParams {
  TransformerBlockParams image_intra, gene_intra;
  TransformerBlockParams image_cross, gene_cross;
  Tensor image_reduce_w, image_reduce_b;
  Tensor gene_reduce_w, gene_reduce_b;
  bool has_reduce = false;
};

struct FusionLevelState {
  std::size_t depth = 0;
  Tensor image_intra, image_cross, image_fused;
  Tensor gene_intra, gene_cross, gene_fused;
};

// Runs the two-stream stack. p0 and g0 are the projected C x model_dim
// inputs; the result is the final pair of C x 2*model_dim representations.
inline std::pair<Tensor, Tensor> tsmcat_forward(
    const std::vector<FusionLevelParams>& levels, const Tensor& p0,
    const Tensor& g0, std::vector<FusionLevelState>* trace = nullptr) {
  require(!levels.empty(), "tsmcat_forward: depth must be at least 1");
  require(p0.rows() == g0.rows(),
          "tsmcat_forward: modality token counts differ, " +
              shape_str(p0.shape()) + " vs " + shape_str(g0.shape()));
  require(p0.cols() == g0.cols(),
          "tsmcat_forward: modality widths differ, " + shape_str(p0.shape()) +
              " vs " + shape_str(g0.shape()));

  Tensor p_in = p0;
  Tensor g_in = g0;
  Tensor p_fused, g_fused;
  for (std::size_t t = 0; t < levels.size(); ++t) {
    const FusionLevelParams& level = levels[t];
    Tensor p_intra = transformer_block(level.image_intra, p_in);
    Tensor g_intra = transformer_block(level.gene_intra, g_in);
    auto [p_cross, g_cross] =
        co_attention_block(level.image_cross, level.gene_cross, p_in, g_in);
    p_fused = concat_cols(p_intra, p_cross);
    g_fused = concat_cols(g_intra, g_cross);
    if (trace != nullptr) {
      trace->push_back(
          {t, p_intra, p_cross, p_fused, g_intra, g_cross, g_fused});
    }
    if (t + 1 < levels.size()) {
      require(level.has_reduce,
              "tsmcat_forward: level " + std::to_string(t) +
                  " lacks the re-projection required between levels");
      p_in = affine(p_fused, level.image_reduce_w, level.image_reduce_b);
      g_in = affine(g_fused, level.gene_reduce_w, level.gene_reduce_b);
    }
  }
  return {p_fused, g_fused};
}

}  // namespace survfuse
