#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "depthforge/common.hpp"

namespace df {

// Dense row-major matrix storage. Rank is always 2; scalars are 1x1 and row
// vectors 1xn. Gradients live beside the values and exist only while the
// tensor participates in differentiation.
struct TensorData {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value iff requires_grad
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double v, bool requires_grad = false);
  static Tensor from_data(std::size_t rows, std::size_t cols, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);
  static Tensor random_gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                double stddev, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  std::size_t rows() const { return d_ ? d_->rows : 0; }
  std::size_t cols() const { return d_ ? d_->cols : 0; }
  std::size_t numel() const { return d_ ? d_->value.size() : 0; }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  bool requires_grad() const { return d_ && d_->requires_grad; }

  double at(std::size_t i, std::size_t j) const { return d_->value[i * d_->cols + j]; }
  double& at(std::size_t i, std::size_t j) { return d_->value[i * d_->cols + j]; }
  double grad_at(std::size_t i, std::size_t j) const { return d_->grad[i * d_->cols + j]; }
  double scalar_value() const;

  std::span<double> values() { return {d_->value.data(), d_->value.size()}; }
  std::span<const double> values() const { return {d_->value.data(), d_->value.size()}; }
  std::span<double> grads();
  std::span<const double> grads() const;

  void zero_grad();
  // Switches gradient participation on/off for a leaf tensor.
  void set_requires_grad(bool on);

  std::shared_ptr<TensorData> storage() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend class Tape;
  friend Tensor make_op_output(std::size_t, std::size_t, bool);
};

// Records one forward pass. Op order is execution order, so walking the
// record backwards is exactly reverse topological order. Single writer:
// one forward + one backward per tape.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t op_count() const { return backward_fns_.size(); }
  bool backward_done() const { return backward_done_; }

  // Seeds d(loss)/d(loss) = 1 and replays the record in reverse, accumulating
  // into every grad-carrying tensor reachable from loss.
  void backward(const Tensor& loss);

  void push(std::function<void()> backward_fn, std::shared_ptr<TensorData> output);

 private:
  std::vector<std::function<void()>> backward_fns_;
  std::vector<std::shared_ptr<TensorData>> outputs_;
  bool recording_ = true;
  bool backward_done_ = false;
};

// ---- primitive operations -------------------------------------------------
// The differentiable surface is exactly: matmul, add, scale (scalar constant,
// scalar tensor, or constant per-element mask), concat, softmax over rows,
// relu, layer norm, cross entropy, slice, transpose, broadcast. Everything
// else composes from these.

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double s);
Tensor scale(Tape& t, const Tensor& a, const Tensor& s);  // s is 1x1
// Elementwise product with a constant factor grid (gradient treats factors as
// fixed); used for token-drop masking.
Tensor scale_elems(Tape& t, const Tensor& a, std::vector<double> factors);
Tensor concat_cols(Tape& t, const std::vector<Tensor>& xs);
Tensor softmax_rows(Tape& t, const Tensor& a);
Tensor relu(Tape& t, const Tensor& a);
Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Weighted softmax cross entropy: sum_{i,k} w[i,k] * (-log softmax(x_i)_k) / normalizer.
// Weights are constant (label pixel counts); normalizer is the pixel count.
Tensor cross_entropy_rows(Tape& t, const Tensor& logits, const std::vector<double>& weights,
                          double normalizer);
Tensor slice_cols(Tape& t, const Tensor& a, std::size_t col0, std::size_t col1);
Tensor transpose(Tape& t, const Tensor& a);
Tensor broadcast_rows(Tape& t, const Tensor& row, std::size_t n);

// ---- compositions ----------------------------------------------------------

// x * w + b, with b broadcast over rows. w is in x out, b is 1 x out.
Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor sum_to_scalar(Tape& t, const Tensor& a);
Tensor mean_rows(Tape& t, const Tensor& a);  // 1 x cols

}  // namespace df
