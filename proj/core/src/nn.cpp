// SPDX-License-Identifier: Apache-2.0
#include "opal/nn.hpp"

#include <cmath>

#include "opal/error.hpp"

namespace opal::nn {

using ad::Index;

Var ParameterSet::add(std::string name, Matrix init) {
  require(!contains(name), "duplicate parameter name: " + name);
  Var v(std::move(init), true);
  items_.emplace_back(std::move(name), v);
  return v;
}

void ParameterSet::adopt(const std::string& prefix, const ParameterSet& other) {
  for (const auto& [n, v] : other.items_) {
    require(!contains(prefix + n), "duplicate parameter name: " + prefix + n);
    items_.emplace_back(prefix + n, v);
  }
}

const Var& ParameterSet::get(std::string_view name) const {
  for (const auto& [n, v] : items_) {
    if (n == name) return v;
  }
  throw ContractViolation("unknown parameter: " + std::string(name));
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& [n, v] : items_) {
    if (n == name) return true;
  }
  return false;
}

void ParameterSet::zero_grad() {
  for (auto& [n, v] : items_) v.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [n, v] : items_) total += static_cast<std::size_t>(v.value().size());
  return total;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  require(items_.size() == other.items_.size(), "parameter count mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    require(items_[i].first == other.items_[i].first, "parameter name mismatch");
    const Matrix& src = other.items_[i].second.value();
    Matrix& dst = items_[i].second.mutable_value();
    require(src.rows() == dst.rows() && src.cols() == dst.cols(), "parameter shape mismatch");
    dst = src;
  }
}

Matrix glorot_uniform(Index rows, Index cols, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix one_hot(int index, int size) {
  require(index >= 0 && index < size, "one_hot index out of range");
  Matrix m = Matrix::Zero(1, size);
  m(0, index) = 1.0;
  return m;
}

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng)
    : in_(in), out_(out) {
  weight_ = params.add(name + ".weight", glorot_uniform(in, out, in, out, rng));
  bias_ = params.add(name + ".bias", Matrix::Zero(1, out));
}

Var Linear::operator()(const Var& x) const {
  return ad::add_row(ad::matmul(x, weight_), bias_);
}

Gate::Gate(ParameterSet& params, const std::string& name, int in, int out, Rng& rng)
    : proj_(params, name, in, out, rng) {}

Var Gate::operator()(const Var& x) const { return ad::sigmoid(proj_(x)); }

Conv2d::Conv2d(ParameterSet& params, const std::string& name, int in_channels, int out_channels,
               int height, int width, int kernel, int stride, int pad, Rng& rng) {
  geometry_ = {in_channels, out_channels, height, width, kernel, stride, pad};
  const int k2 = kernel * kernel;
  weight_ = params.add(name + ".weight", glorot_uniform(out_channels, in_channels * k2,
                                                        in_channels * k2, out_channels * k2, rng));
  bias_ = params.add(name + ".bias", Matrix::Zero(1, out_channels));
}

Var Conv2d::operator()(const Var& x) const { return ad::conv2d(x, weight_, bias_, geometry_); }

ConvTranspose2d::ConvTranspose2d(ParameterSet& params, const std::string& name, int in_channels,
                                 int out_channels, int height, int width, int kernel, int stride,
                                 int pad, Rng& rng) {
  geometry_ = {in_channels, out_channels, height, width, kernel, stride, pad};
  const int k2 = kernel * kernel;
  weight_ = params.add(name + ".weight", glorot_uniform(out_channels * k2, in_channels,
                                                        in_channels * k2, out_channels * k2, rng));
  bias_ = params.add(name + ".bias", Matrix::Zero(1, out_channels));
}

Var ConvTranspose2d::operator()(const Var& x) const {
  return ad::conv_transpose2d(x, weight_, bias_, geometry_);
}

Gru::Gru(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng)
    : hidden_(hidden) {
  w_input_ = params.add(name + ".w_input", glorot_uniform(input, 3 * hidden, input, hidden, rng));
  w_hidden_ =
      params.add(name + ".w_hidden", glorot_uniform(hidden, 3 * hidden, hidden, hidden, rng));
  b_input_ = params.add(name + ".b_input", Matrix::Zero(1, 3 * hidden));
  b_hidden_ = params.add(name + ".b_hidden", Matrix::Zero(1, 3 * hidden));
}

Var Gru::operator()(const Var& seq, bool reverse) const {
  const Index steps = seq.rows();
  require(steps > 0, "GRU over empty sequence");
  const Index h = hidden_;
  const Var projected = ad::add_row(ad::matmul(seq, w_input_), b_input_);
  Var state = ad::constant(Matrix::Zero(1, h));
  std::vector<Var> outputs(static_cast<std::size_t>(steps));
  for (Index i = 0; i < steps; ++i) {
    const Index t = reverse ? steps - 1 - i : i;
    const Var gi = ad::slice_rows(projected, t, 1);
    const Var gh = ad::add_row(ad::matmul(state, w_hidden_), b_hidden_);
    const Var reset = ad::sigmoid(ad::slice_cols(gi, 0, h) + ad::slice_cols(gh, 0, h));
    const Var update = ad::sigmoid(ad::slice_cols(gi, h, h) + ad::slice_cols(gh, h, h));
    const Var candidate =
        ad::tanh(ad::slice_cols(gi, 2 * h, h) + ad::mul(reset, ad::slice_cols(gh, 2 * h, h)));
    state = candidate + ad::mul(update, state - candidate);
    outputs[static_cast<std::size_t>(t)] = state;
  }
  return ad::concat_rows(outputs);
}

BiGru::BiGru(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng)
    : forward_(params, name + ".fwd", input, hidden, rng),
      backward_(params, name + ".bwd", input, hidden, rng) {}

Var BiGru::operator()(const Var& seq) const {
  return ad::concat_cols({forward_(seq, false), backward_(seq, true)});
}

Lstm::Lstm(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng)
    : hidden_(hidden) {
  w_input_ = params.add(name + ".w_input", glorot_uniform(input, 4 * hidden, input, hidden, rng));
  w_hidden_ =
      params.add(name + ".w_hidden", glorot_uniform(hidden, 4 * hidden, hidden, hidden, rng));
  Matrix bias = Matrix::Zero(1, 4 * hidden);
  bias.middleCols(hidden, hidden).setOnes();  // forget gate
  bias_ = params.add(name + ".bias", std::move(bias));
}

Var Lstm::operator()(const Var& seq, bool reverse) const {
  const Index steps = seq.rows();
  require(steps > 0, "LSTM over empty sequence");
  const Index h = hidden_;
  const Var projected = ad::add_row(ad::matmul(seq, w_input_), bias_);
  Var state = ad::constant(Matrix::Zero(1, h));
  Var cell = ad::constant(Matrix::Zero(1, h));
  std::vector<Var> outputs(static_cast<std::size_t>(steps));
  for (Index i = 0; i < steps; ++i) {
    const Index t = reverse ? steps - 1 - i : i;
    const Var gates = ad::slice_rows(projected, t, 1) + ad::matmul(state, w_hidden_);
    const Var in_gate = ad::sigmoid(ad::slice_cols(gates, 0, h));
    const Var forget = ad::sigmoid(ad::slice_cols(gates, h, h));
    const Var candidate = ad::tanh(ad::slice_cols(gates, 2 * h, h));
    const Var out_gate = ad::sigmoid(ad::slice_cols(gates, 3 * h, h));
    cell = ad::mul(forget, cell) + ad::mul(in_gate, candidate);
    state = ad::mul(out_gate, ad::tanh(cell));
    outputs[static_cast<std::size_t>(t)] = state;
  }
  return ad::concat_rows(outputs);
}

BiLstm::BiLstm(ParameterSet& params, const std::string& name, int input, int hidden, Rng& rng)
    : forward_(params, name + ".fwd", input, hidden, rng),
      backward_(params, name + ".bwd", input, hidden, rng) {}

Var BiLstm::operator()(const Var& seq) const {
  return ad::concat_cols({forward_(seq, false), backward_(seq, true)});
}

}  // namespace opal::nn
