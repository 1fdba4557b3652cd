// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "layers.hpp"
#include "tensor.hpp"

namespace survfuse {

// One self-attention pooling head. The query path runs through wq and then a
// width-reducing MLP; keys match the reduced query width; values keep d_in.
struct PoolHeadParams {
  Tensor wq;        // d_in x d_in
  MlpParams q_mlp;  // d_in -> d_att
  Tensor wk;        // d_in x d_att
  Tensor wv;        // d_in x d_v
};

struct MhapParams {
  std::vector<PoolHeadParams> heads;
  double pool_ratio = 0.5;
  // When set, retained attention rows are rescaled to sum to one over the
  // retained columns before weighting V.
  bool renormalize = false;
};

struct PoolInspection {
  Tensor attention;                   // N x N, row-stochastic
  std::vector<double> token_mass;     // attention mass received per token
  std::vector<std::size_t> retained;  // ascending original indices
};

// ceil(ratio * n) tokens survive pooling. The small guard keeps binary
// representations of ratios like 0.1 from pushing an exact product such as
// 0.1 * 30 just above its integer value.
inline std::size_t top_rank_count(double ratio, std::size_t n) {
  require(ratio > 0.0 && ratio <= 1.0,
          "top_rank_count: pooling ratio must lie in (0, 1]");
  require(n >= 1, "top_rank_count: need at least one token");
  const double scaled = ratio * static_cast<double>(n);
  auto count = static_cast<std::size_t>(std::ceil(scaled - 1e-9));
  count = std::max<std::size_t>(count, 1);
  return std::min(count, n);
}

// Indices of the `keep` largest masses, ties to the lowest index, returned
// in ascending index order.
inline std::vector<std::size_t> top_rank_select(
    const std::vector<double>& mass, std::size_t keep) {
  require(keep >= 1 && keep <= mass.size(),
          "top_rank_select: keep count out of range");
  std::vector<std::size_t> order(mass.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&mass](std::size_t a, std::size_t b) {
              if (mass[a] != mass[b]) return mass[a] > mass[b];
              return a < b;
            });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

// Top-rank masking and reduction: rank tokens by the attention mass they
// receive (column sums), zero the rows and columns of dropped tokens, weight
// V by the masked attention, and average the retained rows. The selection is
// a constant during backward; dropped tokens receive exactly zero gradient.
inline Tensor top_rank_pool(const Tensor& att, const Tensor& values,
                            double ratio, bool renormalize = false,
                            PoolInspection* inspection = nullptr) {
  require(att.shape().size() == 2 && att.rows() == att.cols(),
          "top_rank_pool: attention must be square, got " +
              shape_str(att.shape()));
  const std::size_t n = att.rows();
  require(values.rows() == n,
          "top_rank_pool: value row count " + std::to_string(values.rows()) +
              " does not match token count " + std::to_string(n));

  std::vector<double> mass(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      mass[j] += att.data()[i * n + j];
    }
  }
  const std::vector<std::size_t> retained =
      top_rank_select(mass, top_rank_count(ratio, n));

  Tensor column_mask = Tensor::full(retained.size(), n, 0.0);
  for (std::size_t r = 0; r < retained.size(); ++r) {
    for (const std::size_t keep_col : retained) {
      column_mask.at(r, keep_col) = 1.0;
    }
  }
  Tensor masked = mul(gather_rows(att, retained), column_mask);
  if (renormalize) {
    Tensor row_sums = matmul(masked, Tensor::full(n, 1, 1.0));
    masked = scale_rows(masked, reciprocal(row_sums));
  }
  Tensor weighted = matmul(masked, values);

  if (inspection != nullptr) {
    inspection->attention = att;
    inspection->token_mass = mass;
    inspection->retained = retained;
  }
  return mean_rows(weighted);
}

// Full single-head pooling: project Z to queries (through the reducing MLP),
// keys, and values; softmax the scaled scores; top-rank pool.
inline Tensor self_attention_pool(const PoolHeadParams& params,
                                  const Tensor& z, double ratio,
                                  bool renormalize = false,
                                  PoolInspection* inspection = nullptr) {
  require(z.shape().size() == 2 && z.rows() >= 1,
          "self_attention_pool: Z must have at least one row");
  require(z.finite(), "self_attention_pool: Z is not finite");
  const std::size_t d_in = z.cols();
  require(params.wq.rows() == d_in && params.wq.cols() == d_in,
          "self_attention_pool: wq must be " + std::to_string(d_in) + " x " +
              std::to_string(d_in) + ", got " + shape_str(params.wq.shape()));
  require(params.wk.rows() == d_in,
          "self_attention_pool: wk input width does not match Z");
  require(params.wv.rows() == d_in,
          "self_attention_pool: wv input width does not match Z");
  Tensor q = mlp_forward(params.q_mlp, matmul(z, params.wq));
  Tensor keys = matmul(z, params.wk);
  require(q.cols() == keys.cols(),
          "self_attention_pool: reduced query width " +
              std::to_string(q.cols()) + " does not match key width " +
              std::to_string(keys.cols()));
  Tensor vals = matmul(z, params.wv);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor att = softmax_rows(scale(matmul(q, transpose(keys)), inv_sqrt_d));
  return top_rank_pool(att, vals, ratio, renormalize, inspection);
}

// Concatenates every pooling head's vector into the patient-level output.
inline Tensor mhap_forward(const MhapParams& params, const Tensor& z) {
  require(!params.heads.empty(), "mhap_forward: needs at least one head");
  Tensor out;
  for (const PoolHeadParams& head : params.heads) {
    Tensor pooled =
        self_attention_pool(head, z, params.pool_ratio, params.renormalize);
    out = out.defined() ? concat_cols(out, pooled) : pooled;
  }
  return out;
}

}  // namespace survfuse
