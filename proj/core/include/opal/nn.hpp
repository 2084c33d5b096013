// SPDX-License-Identifier: Apache-2.0
//
// Parameter containers and the layer building blocks shared by every model.
#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "opal/autodiff.hpp"
#include "opal/random.hpp"

namespace opal::nn {

using ad::Matrix;
using ad::Var;

/// Ordered, named collection of trainable leaves. Order is insertion order and
/// is the serialization order of checkpoints.
class ParameterSet {
 public:
  Var add(std::string name, Matrix init);
  /// Shares (not copies) every leaf of `other` under `prefix + name`.
  void adopt(const std::string& prefix, const ParameterSet& other);

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  const Var& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  void zero_grad();
  std::size_t scalar_count() const;
  /// Copies values from `other`; names and shapes must match exactly.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, int fan_in, int fan_out, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  Var weight_;  // in x out
  Var bias_;    // 1 x out
};

/// Learned sigmoid gate: sigmoid(x W + b).
class Gate {
 public:
  Gate() = default;
  Gate(ParameterSet& params, const std::string& name, int in, int out, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  Linear proj_;
};

class Conv2d {
 public:
  Conv2d() = default;
  /// Input planes of size height x width; output size follows the geometry.
  Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels,
         int height, int width, int kernel, int stride, int pad, Rng& rng);
  Var operator()(const Var& x) const;
  const ad::ConvGeometry& geometry() const { return geometry_; }
  int out_height() const { return geometry_.conv_out_height(); }
  int out_width() const { return geometry_.conv_out_width(); }

 private:
  ad::ConvGeometry geometry_;
  Var weight_;
  Var bias_;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels,
                  int height, int width, int kernel, int stride, int pad, Rng& rng);
  Var operator()(const Var& x) const;
  int out_height() const { return geometry_.transposed_out_height(); }
  int out_width() const { return geometry_.transposed_out_width(); }

 private:
  ad::ConvGeometry geometry_;
  Var weight_;
  Var bias_;
};

/// Single-direction GRU (reset gate applied after the hidden projection).
class Gru {
 public:
  Gru() = default;
  Gru(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng);
  /// seq: T x input. Returns T x hidden, row t is the state after step t in
  /// the original time order (also when run in reverse).
  Var operator()(const Var& seq, bool reverse = false) const;
  int hidden() const { return hidden_; }

 private:
  int hidden_ = 0;
  Var w_input_;   // input x 3h, gate order [reset, update, candidate]
  Var w_hidden_;  // h x 3h
  Var b_input_;
  Var b_hidden_;
};

class BiGru {
 public:
  BiGru() = default;
  BiGru(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng);
  /// T x (2 * hidden): forward states then backward states.
  Var operator()(const Var& seq) const;
  int output_size() const { return 2 * forward_.hidden(); }

 private:
  Gru forward_;
  Gru backward_;
};

class Lstm {
 public:
  Lstm() = default;
  Lstm(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng);
  Var operator()(const Var& seq, bool reverse = false) const;
  int hidden() const { return hidden_; }

 private:
  int hidden_ = 0;
  Var w_input_;   // input x 4h, gate order [input, forget, cell, output]
  Var w_hidden_;  // h x 4h
  Var bias_;
};

class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng);
  Var operator()(const Var& seq) const;
  int output_size() const { return 2 * forward_.hidden(); }

 private:
  Lstm forward_;
  Lstm backward_;
};

Matrix one_hot(int index, int size);

}  // namespace opal::nn
