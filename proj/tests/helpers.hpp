// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <survfuse/rng.hpp>
#include <survfuse/tensor.hpp>

namespace testutil {

inline survfuse::Tensor rand_tensor(std::size_t rows, std::size_t cols,
                                    survfuse::Rng& rng, double half_width = 1.0) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-half_width, half_width);
  return survfuse::Tensor::matrix(rows, cols, std::move(v));
}

inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace testutil
