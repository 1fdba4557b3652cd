// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace survfuse {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) out << " x ";
    out << s[i];
  }
  out << "]";
  return out.str();
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

class GradientTape;

// Dense row-major matrix (or scalar / row / column) of doubles. Copying a
// Tensor is cheap and aliases the same value and gradient buffers; clone()
// makes an independent copy. A Tensor produced by an op while a tape is
// recording carries that tape and a zero-initialized gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    require(data_->size() == count(shape_),
            "Tensor: value count " + std::to_string(data_->size()) +
                " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  static Tensor column(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n, 1}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  static Tensor full(std::size_t rows, std::size_t cols, double value) {
    return Tensor({rows, cols},
                  std::vector<double>(rows * cols, value));
  }

  const Shape& shape() const { return shape_; }
  bool defined() const { return data_ != nullptr; }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  std::size_t rows() const {
    require(shape_.size() == 2, "Tensor::rows: tensor is not a matrix");
    return shape_[0];
  }

  std::size_t cols() const {
    require(shape_.size() == 2, "Tensor::cols: tensor is not a matrix");
    return shape_[1];
  }

  bool is_scalar() const { return size() == 1; }

  double value() const {
    require(is_scalar(), "Tensor::value: tensor of shape " +
                             shape_str(shape_) + " is not a scalar");
    return (*data_)[0];
  }

  double& at(std::size_t r, std::size_t c) {
    return (*data_)[r * cols() + c];
  }

  double at(std::size_t r, std::size_t c) const {
    return (*data_)[r * cols() + c];
  }

  std::vector<double>& data() {
    require(defined(), "Tensor::data: tensor is undefined");
    return *data_;
  }

  const std::vector<double>& data() const {
    require(defined(), "Tensor::data: tensor is undefined");
    return *data_;
  }

  bool has_grad() const { return grad_ != nullptr; }

  std::vector<double>& grad() const {
    require(grad_ != nullptr,
            "Tensor::grad: tensor has no gradient buffer (not tracked)");
    return *grad_;
  }

  GradientTape* tape() const { return tape_; }

  // Same value buffer, no tape and no gradient: reads of the detached tensor
  // contribute nothing to backward.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  bool finite() const {
    for (const double v : *data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::size_t count(const Shape& s) {
    std::size_t n = 1;
    for (const std::size_t d : s) n *= d;
    return n;
  }

 private:
  friend class GradientTape;
  friend Tensor tracked_output(Shape shape, GradientTape* tape);

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  GradientTape* tape_ = nullptr;
};

// Records one backward closure per op, in creation order. Creation order is a
// topological order of the value graph, so one reverse sweep that visits each
// node exactly once propagates all adjoints.
class GradientTape {
 public:
  GradientTape() = default;
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  // Registers a trainable leaf. The returned tensor aliases `values` and
  // holds a persistent gradient buffer.
  Tensor parameter(Tensor values) {
    attach(values);
    params_.push_back(values);
    return values;
  }

  // Attaches a gradient buffer to a leaf without registering it as
  // trainable. Used by tests that probe gradients of op inputs.
  Tensor watch(Tensor values) {
    attach(values);
    return values;
  }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
  }

  void record(std::function<void()> node) {
    if (recording_) nodes_.push_back(std::move(node));
  }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded closures newest-first.
  // Gradients accumulate; call zero_grad() before a fresh forward pass.
  void backward(const Tensor& loss) {
    require(loss.defined() && loss.tape_ == this,
            "GradientTape::backward: loss was not produced on this tape");
    require(loss.is_scalar(),
            "GradientTape::backward: loss must be a scalar, got shape " +
                shape_str(loss.shape()));
    loss.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void zero_grad() {
    for (Tensor& p : params_) {
      std::fill(p.grad().begin(), p.grad().end(), 0.0);
    }
  }

  // Drops recorded closures (and with them all intermediate tensors) while
  // keeping parameters and their gradient buffers.
  void clear_nodes() { nodes_.clear(); }

 private:
  void attach(Tensor& t) {
    require(t.defined(), "GradientTape: cannot track an undefined tensor");
    require(t.tape_ == nullptr || t.tape_ == this,
            "GradientTape: tensor already belongs to another tape");
    t.tape_ = this;
    if (!t.grad_) {
      t.grad_ = std::make_shared<std::vector<double>>(t.size(), 0.0);
    }
  }

  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> params_;
  bool recording_ = true;
};

// Suspends recording on a tape for its lifetime. Ops executed under the guard
// compute values only; their outputs are constants.
class NoGradGuard {
 public:
  explicit NoGradGuard(GradientTape& tape)
      : tape_(&tape), previous_(tape.recording()) {
    tape_->set_recording(false);
  }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  ~NoGradGuard() { tape_->set_recording(previous_); }

 private:
  GradientTape* tape_;
  bool previous_;
};

inline Tensor tracked_output(Shape shape, GradientTape* tape) {
  Tensor t{std::move(shape)};
  if (tape != nullptr) {
    t.tape_ = tape;
    t.grad_ = std::make_shared<std::vector<double>>(t.size(), 0.0);
  }
  return t;
}

namespace detail {

// Tape the result of an op should record on: the unique tape among the
// inputs, provided it is recording. Inputs on two different tapes are a
// usage error.
inline GradientTape* result_tape(std::initializer_list<const Tensor*> inputs) {
  GradientTape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (t->tape() == nullptr) continue;
    require(tape == nullptr || tape == t->tape(),
            "op: input tensors belong to different gradient tapes");
    tape = t->tape();
  }
  if (tape != nullptr && !tape->recording()) return nullptr;
  return tape;
}

// c(m x n) += a(m x k) . b(k x n)
inline void mm(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      if (av == 0.0) continue;
      const double* brow = b + t * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c(m x n) += a(m x k) . b^T, with b stored n x k
inline void mm_nt(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      c[i * n + j] += acc;
    }
  }
}

// c(m x n) += a^T . b, with a stored k x m
inline void mm_tn(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  for (std::size_t t = 0; t < k; ++t) {
    const double* arow = a + t * m;
    const double* brow = b + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void check_finite(const Tensor& t, const char* op) {
  if (!t.finite()) {
    throw std::runtime_error(std::string(op) +
                             ": produced a non-finite value");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Each returns a fresh tensor; when the inputs live on a recording tape
// the op also records a closure that accumulates adjoints into every tracked
// input. Closures capture tensors by value, which aliases the shared buffers.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2,
          "matmul: operands must be matrices");
  require(a.cols() == b.rows(),
          "matmul: inner dimensions differ, " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  GradientTape* tape = detail::result_tape({&a, &b});
  Tensor out = tracked_output({m, n}, tape);
  detail::mm(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (tape != nullptr) {
    tape->record([a, b, out, m, k, n]() {
      const double* g = out.grad().data();
      if (a.has_grad()) {
        detail::mm_nt(g, b.data().data(), a.grad().data(), m, n, k);
      }
      if (b.has_grad()) {
        detail::mm_tn(a.data().data(), g, b.grad().data(), k, m, n);
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  require(a.shape().size() == 2, "transpose: operand must be a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output({n, m}, tape);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.data()[j * m + i] = a.data()[i * n + j];
    }
  }
  if (tape != nullptr) {
    tape->record([a, out, m, n]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          a.grad()[i * n + j] += out.grad()[j * m + i];
        }
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "add: shapes differ, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  GradientTape* tape = detail::result_tape({&a, &b});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = a.data()[i] + b.data()[i];
  }
  if (tape != nullptr) {
    tape->record([a, b, out]() {
      if (a.has_grad()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          a.grad()[i] += out.grad()[i];
        }
      }
      if (b.has_grad()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          b.grad()[i] += out.grad()[i];
        }
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "sub: shapes differ, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  GradientTape* tape = detail::result_tape({&a, &b});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = a.data()[i] - b.data()[i];
  }
  if (tape != nullptr) {
    tape->record([a, b, out]() {
      if (a.has_grad()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          a.grad()[i] += out.grad()[i];
        }
      }
      if (b.has_grad()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          b.grad()[i] -= out.grad()[i];
        }
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "mul: shapes differ, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  GradientTape* tape = detail::result_tape({&a, &b});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = a.data()[i] * b.data()[i];
  }
  if (tape != nullptr) {
    tape->record([a, b, out]() {
      if (a.has_grad()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          a.grad()[i] += out.grad()[i] * b.data()[i];
        }
      }
      if (b.has_grad()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          b.grad()[i] += out.grad()[i] * a.data()[i];
        }
      }
    });
  }
  return out;
}

// y = mul * x + shift, elementwise with scalar coefficients.
inline Tensor affine_scalar(const Tensor& a, double mul, double shift) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = mul * a.data()[i] + shift;
  }
  if (tape != nullptr) {
    tape->record([a, out, mul]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        a.grad()[i] += mul * out.grad()[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double factor) {
  return affine_scalar(a, factor, 0.0);
}

// a is m x n, bias is 1 x n, added to every row.
inline Tensor add_row_broadcast(const Tensor& a, const Tensor& bias) {
  require(bias.shape().size() == 2 && bias.rows() == 1,
          "add_row_broadcast: bias must be a 1 x n row");
  require(a.cols() == bias.cols(),
          "add_row_broadcast: width mismatch, " + shape_str(a.shape()) +
              " vs " + shape_str(bias.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  GradientTape* tape = detail::result_tape({&a, &bias});
  Tensor out = tracked_output({m, n}, tape);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.data()[i * n + j] = a.data()[i * n + j] + bias.data()[j];
    }
  }
  if (tape != nullptr) {
    tape->record([a, bias, out, m, n]() {
      if (a.has_grad()) {
        for (std::size_t i = 0; i < m * n; ++i) {
          a.grad()[i] += out.grad()[i];
        }
      }
      if (bias.has_grad()) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            bias.grad()[j] += out.grad()[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

// Scales row i of a (m x n) by col[i] (m x 1).
inline Tensor scale_rows(const Tensor& a, const Tensor& col) {
  require(col.shape().size() == 2 && col.cols() == 1,
          "scale_rows: scale must be an m x 1 column");
  require(a.rows() == col.rows(),
          "scale_rows: height mismatch, " + shape_str(a.shape()) + " vs " +
              shape_str(col.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  GradientTape* tape = detail::result_tape({&a, &col});
  Tensor out = tracked_output({m, n}, tape);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.data()[i * n + j] = a.data()[i * n + j] * col.data()[i];
    }
  }
  if (tape != nullptr) {
    tape->record([a, col, out, m, n]() {
      if (a.has_grad()) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            a.grad()[i * n + j] += out.grad()[i * n + j] * col.data()[i];
          }
        }
      }
      if (col.has_grad()) {
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            acc += out.grad()[i * n + j] * a.data()[i * n + j];
          }
          col.grad()[i] += acc;
        }
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  }
  if (tape != nullptr) {
    tape->record([a, out]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.data()[i] > 0.0) a.grad()[i] += out.grad()[i];
      }
    });
  }
  return out;
}

// Exact Gaussian-CDF form: y = x * Phi(x).
inline Tensor gelu(const Tensor& a) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out.data()[i] = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
  }
  if (tape != nullptr) {
    tape->record([a, out]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
        const double pdf =
            0.3989422804014327 * std::exp(-0.5 * x * x);
        a.grad()[i] += out.grad()[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out.data()[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
  }
  if (tape != nullptr) {
    tape->record([a, out]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double y = out.data()[i];
        a.grad()[i] += out.grad()[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

inline Tensor reciprocal(const Tensor& a) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(a.data()[i] != 0.0, "reciprocal: input contains a zero");
    out.data()[i] = 1.0 / a.data()[i];
  }
  if (tape != nullptr) {
    tape->record([a, out]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        a.grad()[i] -= out.grad()[i] * out.data()[i] * out.data()[i];
      }
    });
  }
  return out;
}

inline Tensor exp_elem(const Tensor& a) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = std::exp(a.data()[i]);
  }
  detail::check_finite(out, "exp_elem");
  if (tape != nullptr) {
    tape->record([a, out]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        a.grad()[i] += out.grad()[i] * out.data()[i];
      }
    });
  }
  return out;
}

inline Tensor log_elem(const Tensor& a) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output(a.shape(), tape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(a.data()[i] > 0.0, "log_elem: input must be positive");
    out.data()[i] = std::log(a.data()[i]);
  }
  if (tape != nullptr) {
    tape->record([a, out]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        a.grad()[i] += out.grad()[i] / a.data()[i];
      }
    });
  }
  return out;
}

// Row-wise softmax with the max subtracted before exponentiation. Fused
// backward: dx = y * (dy - sum(dy * y)) per row.
inline Tensor softmax_rows(const Tensor& a) {
  require(a.shape().size() == 2, "softmax_rows: operand must be a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  require(n > 0, "softmax_rows: rows must be non-empty");
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output({m, n}, tape);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    double* y = out.data().data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  detail::check_finite(out, "softmax_rows");
  if (tape != nullptr) {
    tape->record([a, out, m, n]() {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = out.data().data() + i * n;
        const double* gy = out.grad().data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        double* gx = a.grad().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          gx[j] += y[j] * (gy[j] - dot);
        }
      }
    });
  }
  return out;
}

// Row-wise layer normalization with learned gain and offset (1 x n each).
// Population variance; eps is added inside the square root.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                              const Tensor& beta, double eps) {
  require(x.shape().size() == 2, "layer_norm_rows: operand must be a matrix");
  const std::size_t m = x.rows(), n = x.cols();
  require(gamma.shape().size() == 2 && gamma.rows() == 1 && gamma.cols() == n,
          "layer_norm_rows: gain must be 1 x " + std::to_string(n));
  require(beta.shape().size() == 2 && beta.rows() == 1 && beta.cols() == n,
          "layer_norm_rows: offset must be 1 x " + std::to_string(n));
  GradientTape* tape = detail::result_tape({&x, &gamma, &beta});
  Tensor out = tracked_output({m, n}, tape);
  std::vector<double> normalized(m * n);
  std::vector<double> inv_sigma(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double sigma = std::sqrt(var + eps);
    require(sigma > 0.0,
            "layer_norm_rows: zero variance row with eps = 0 is not "
            "normalizable");
    inv_sigma[i] = 1.0 / sigma;
    for (std::size_t j = 0; j < n; ++j) {
      const double z = (row[j] - mean) * inv_sigma[i];
      normalized[i * n + j] = z;
      out.data()[i * n + j] = gamma.data()[j] * z + beta.data()[j];
    }
  }
  detail::check_finite(out, "layer_norm_rows");
  if (tape != nullptr) {
    tape->record([x, gamma, beta, out, m, n, normalized, inv_sigma]() {
      for (std::size_t i = 0; i < m; ++i) {
        const double* gy = out.grad().data() + i * n;
        const double* z = normalized.data() + i * n;
        if (gamma.has_grad()) {
          for (std::size_t j = 0; j < n; ++j) {
            gamma.grad()[j] += gy[j] * z[j];
          }
        }
        if (beta.has_grad()) {
          for (std::size_t j = 0; j < n; ++j) beta.grad()[j] += gy[j];
        }
        if (x.has_grad()) {
          double mean_dz = 0.0, mean_dzz = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dz = gy[j] * gamma.data()[j];
            mean_dz += dz;
            mean_dzz += dz * z[j];
          }
          mean_dz /= static_cast<double>(n);
          mean_dzz /= static_cast<double>(n);
          double* gx = x.grad().data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double dz = gy[j] * gamma.data()[j];
            gx[j] += inv_sigma[i] * (dz - mean_dz - z[j] * mean_dzz);
          }
        }
      }
    });
  }
  return out;
}

// Column means as a 1 x n row. Summands are sorted per column before
// accumulation, so the result is bitwise invariant to row permutations.
inline Tensor mean_rows(const Tensor& a) {
  require(a.shape().size() == 2, "mean_rows: operand must be a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  require(m > 0, "mean_rows: matrix must have at least one row");
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output({1, n}, tape);
  std::vector<double> column(m);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) column[i] = a.data()[i * n + j];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (const double v : column) acc += v;
    out.data()[j] = acc / static_cast<double>(m);
  }
  if (tape != nullptr) {
    tape->record([a, out, m, n]() {
      if (!a.has_grad()) return;
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          a.grad()[i * n + j] += out.grad()[j] * inv;
        }
      }
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output({1, 1}, tape);
  double acc = 0.0;
  for (const double v : a.data()) acc += v;
  out.data()[0] = acc;
  if (tape != nullptr) {
    tape->record([a, out]() {
      if (!a.has_grad()) return;
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < a.size(); ++i) a.grad()[i] += g;
    });
  }
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 &&
              a.rows() == b.rows(),
          "concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  GradientTape* tape = detail::result_tape({&a, &b});
  Tensor out = tracked_output({m, na + nb}, tape);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < na; ++j) {
      out.data()[i * (na + nb) + j] = a.data()[i * na + j];
    }
    for (std::size_t j = 0; j < nb; ++j) {
      out.data()[i * (na + nb) + na + j] = b.data()[i * nb + j];
    }
  }
  if (tape != nullptr) {
    tape->record([a, b, out, m, na, nb]() {
      for (std::size_t i = 0; i < m; ++i) {
        if (a.has_grad()) {
          for (std::size_t j = 0; j < na; ++j) {
            a.grad()[i * na + j] += out.grad()[i * (na + nb) + j];
          }
        }
        if (b.has_grad()) {
          for (std::size_t j = 0; j < nb; ++j) {
            b.grad()[i * nb + j] += out.grad()[i * (na + nb) + na + j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: needs at least one part");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    require(p.shape().size() == 2 && p.cols() == n,
            "concat_rows: column counts differ");
    m += p.rows();
  }
  GradientTape* tape = nullptr;
  for (const Tensor& p : parts) {
    GradientTape* t = detail::result_tape({&p});
    if (t != nullptr) {
      require(tape == nullptr || tape == t,
              "concat_rows: parts belong to different gradient tapes");
      tape = t;
    }
  }
  Tensor out = tracked_output({m, n}, tape);
  std::size_t row = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(),
              out.data().begin() + row * n);
    row += p.rows();
  }
  if (tape != nullptr) {
    std::vector<Tensor> captured(parts.begin(), parts.end());
    tape->record([captured, out, n]() {
      std::size_t row = 0;
      for (const Tensor& p : captured) {
        if (p.has_grad()) {
          for (std::size_t i = 0; i < p.size(); ++i) {
            p.grad()[i] += out.grad()[row * n + i];
          }
        }
        row += p.rows();
      }
    });
  }
  return out;
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  std::vector<Tensor> v(parts);
  return concat_rows(std::span<const Tensor>(v));
}

// Selects rows of a by index; duplicates allowed. Backward scatter-adds.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  require(a.shape().size() == 2, "gather_rows: operand must be a matrix");
  require(!idx.empty(), "gather_rows: index list must be non-empty");
  const std::size_t n = a.cols();
  for (const std::size_t i : idx) {
    require(i < a.rows(), "gather_rows: index " + std::to_string(i) +
                              " out of range for " + shape_str(a.shape()));
  }
  GradientTape* tape = detail::result_tape({&a});
  Tensor out = tracked_output({idx.size(), n}, tape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(a.data().begin() + idx[r] * n,
              a.data().begin() + (idx[r] + 1) * n,
              out.data().begin() + r * n);
  }
  if (tape != nullptr) {
    tape->record([a, out, idx, n]() {
      if (!a.has_grad()) return;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < n; ++j) {
          a.grad()[idx[r] * n + j] += out.grad()[r * n + j];
        }
      }
    });
  }
  return out;
}

// x . w + bias, the bias broadcast over rows.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add_row_broadcast(matmul(x, w), bias);
}

inline double max_value(const Tensor& a) {
  require(a.size() > 0, "max_value: tensor is empty");
  double mx = a.data()[0];
  for (const double v : a.data()) mx = std::max(mx, v);
  return mx;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // false: decay enters the gradient (classic L2). true: decay is applied
  // directly to the weights after the moment update.
  bool decoupled_decay = false;
};

// First and second moment accumulators, one pair per parameter tensor,
// allocated on first step. Step count drives bias correction.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  long step_count() const { return steps_; }

  void step(std::span<Tensor> params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        m_[p].assign(params[p].size(), 0.0);
        v_[p].assign(params[p].size(), 0.0);
      }
    }
    require(m_.size() == params.size(),
            "AdamState::step: parameter count changed between steps");
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, steps_);
    const double bc2 = 1.0 - std::pow(config_.beta2, steps_);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& param = params[p];
      require(param.size() == m_[p].size(),
              "AdamState::step: parameter shape changed between steps");
      const std::vector<double>& g = param.grad();
      std::vector<double>& w = param.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i];
        if (!config_.decoupled_decay) gi += config_.weight_decay * w[i];
        m_[p][i] = config_.beta1 * m_[p][i] + (1.0 - config_.beta1) * gi;
        v_[p][i] = config_.beta2 * v_[p][i] + (1.0 - config_.beta2) * gi * gi;
        const double mhat = m_[p][i] / bc1;
        const double vhat = v_[p][i] / bc2;
        w[i] -= config_.learning_rate * mhat /
                (std::sqrt(vhat) + config_.epsilon);
        if (config_.decoupled_decay) {
          w[i] -= config_.learning_rate * config_.weight_decay * w[i];
        }
        if (!std::isfinite(w[i])) {
          throw std::runtime_error(
              "AdamState::step: parameter became non-finite");
        }
      }
    }
  }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  long steps_ = 0;
};

inline void adam_step(AdamState& state, std::span<Tensor> params) {
  state.step(params);
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Central difference of f with respect to one coordinate of one parameter.
// f must recompute its value from the current parameter contents on every
// call and must not record nodes (wrap the evaluation in NoGradGuard).
inline double fd_partial(const std::function<double()>& f, Tensor& param,
                         std::size_t index, double step) {
  require(index < param.size(), "fd_partial: coordinate index out of range");
  require(step > 0.0, "fd_partial: step must be positive");
  double& w = param.data()[index];
  const double saved = w;
  w = saved + step;
  const double hi = f();
  w = saved - step;
  const double lo = f();
  w = saved;
  return (hi - lo) / (2.0 * step);
}

// Full central-difference gradient for every coordinate of every parameter.
inline std::vector<std::vector<double>> fd_gradient(
    const std::function<double()>& f, std::span<Tensor> params,
    double step = 1e-4) {
  std::vector<std::vector<double>> grads(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    grads[p].resize(params[p].size());
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      grads[p][i] = fd_partial(f, params[p], i, step);
    }
  }
  return grads;
}

}  // namespace survfuse
