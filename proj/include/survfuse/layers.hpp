// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tensor.hpp"

namespace survfuse {

enum class Activation { relu, gelu };

inline Tensor activate(Activation kind, const Tensor& x) {
  return kind == Activation::relu ? relu(x) : gelu(x);
}

// Two affine layers with a pointwise non-linearity between them.
struct MlpParams {
  Tensor w1, b1;
  Tensor w2, b2;
  Activation activation = Activation::gelu;
};

inline Tensor mlp_forward(const MlpParams& params, const Tensor& x) {
  require(x.cols() == params.w1.rows(),
          "mlp_forward: input width " + std::to_string(x.cols()) +
              " does not match first layer " + shape_str(params.w1.shape()));
  Tensor hidden = activate(params.activation, affine(x, params.w1, params.b1));
  return affine(hidden, params.w2, params.b2);
}

struct LayerNormParams {
  Tensor gain;    // 1 x n
  Tensor offset;  // 1 x n
  double eps = 1e-8;
};

inline Tensor layer_norm(const LayerNormParams& params, const Tensor& x) {
  return layer_norm_rows(x, params.gain, params.offset, params.eps);
}

}  // namespace survfuse
