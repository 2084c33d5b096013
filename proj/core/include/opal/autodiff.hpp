// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; batched images are stored one per
// row, channel-major (C x H x W flattened).
#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace opal::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Matrix& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Matrix::Zero(value.rows(), value.cols());
    }
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var scalar(double v);

  const Matrix& value() const { return node_->value; }
  /// In-place access for optimizers; never call on graph intermediates.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
void backward(const Var& root);

Var constant(Matrix value);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
/// a (r x c) op row (1 x c), broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
/// sqrt with a zero subgradient at 0.
Var sqrt(const Var& a);
/// Clamp with zero gradient outside [lo, hi].
Var clamp(const Var& a, double lo, double hi);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_rows(const Var& a);   // 1 x c
Var mean_rows(const Var& a);  // 1 x c
Var sum_cols(const Var& a);   // r x 1

Var transpose(const Var& a);
/// Row-major reshape; element order is preserved.
Var reshape(const Var& a, Index rows, Index cols);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, const std::vector<Index>& rows);
/// Inverse of gather_rows: rows not listed are zero.
Var scatter_rows(const Var& a, const std::vector<Index>& rows, Index total_rows);
Var replicate_rows(const Var& row, Index count);
/// For a column vector v (p x 1): out(m, n) = v(m) - v(n).
Var pairwise_diff(const Var& v);

/// Each row holds `channels` planes of equal size; normalizes across planes
/// independently at every spatial position.
Var softmax_channels(const Var& a, Index channels);
Var log_softmax_channels(const Var& a, Index channels);

struct ConvGeometry {
  int in_channels = 1;
  int out_channels = 1;
  int in_height = 1;
  int in_width = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int conv_out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int conv_out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  int transposed_out_height() const { return (in_height - 1) * stride - 2 * pad + kernel; }
  int transposed_out_width() const { return (in_width - 1) * stride - 2 * pad + kernel; }
};

/// x: N x (Cin*H*W); weight: Cout x (Cin*k*k); bias: 1 x Cout.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g);
/// x: N x (Cin*H*W); weight: (Cout*k*k) x Cin; bias: 1 x Cout.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

namespace detail {
void im2col(const double* image, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, double* columns);
void col2im(const double* columns, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, double* image);
}  // namespace detail

}  // namespace opal::ad
