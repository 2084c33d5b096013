// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "opal/error.hpp"
#include "opal/nn.hpp"
#include "support.hpp"

namespace opal {
namespace {

using ad::Matrix;
using ad::Var;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Scalar-loop GRU; gate order [reset, update, candidate], reset applied to
/// the projected hidden state.
Matrix gru_oracle(const Matrix& seq, const Matrix& wi, const Matrix& wh, const Matrix& bi, const Matrix& bh,
                  bool reverse) {
  const int steps = static_cast<int>(seq.rows());
  const int h = static_cast<int>(wh.rows());
  Matrix out(steps, h);
  std::vector<double> state(static_cast<std::size_t>(h), 0.0);
  for (int i = 0; i < steps; ++i) {
    const int t = reverse ? steps - 1 - i : i;
    std::vector<double> next(static_cast<std::size_t>(h));
    for (int u = 0; u < h; ++u) {
      double gi[3], gh[3];
      for (int g = 0; g < 3; ++g) {
        gi[g] = bi(0, g * h + u);
        gh[g] = bh(0, g * h + u);
        for (int e = 0; e < seq.cols(); ++e) gi[g] += seq(t, e) * wi(e, g * h + u);
        for (int e = 0; e < h; ++e) gh[g] += state[e] * wh(e, g * h + u);
      }
      const double r = sig(gi[0] + gh[0]);
      const double z = sig(gi[1] + gh[1]);
      const double n = std::tanh(gi[2] + r * gh[2]);
      next[u] = (1.0 - z) * n + z * state[u];
    }
    state = next;
    for (int u = 0; u < h; ++u) out(t, u) = state[u];
  }
  return out;
}

/// Scalar-loop LSTM; gate order [input, forget, cell, output].
Matrix lstm_oracle(const Matrix& seq, const Matrix& wi, const Matrix& wh, const Matrix& b) {
  const int steps = static_cast<int>(seq.rows());
  const int h = static_cast<int>(wh.rows());
  Matrix out(steps, h);
  std::vector<double> state(static_cast<std::size_t>(h), 0.0), cell(static_cast<std::size_t>(h), 0.0);
  for (int t = 0; t < steps; ++t) {
    std::vector<double> next(static_cast<std::size_t>(h));
    for (int u = 0; u < h; ++u) {
      double a[4];
      for (int g = 0; g < 4; ++g) {
        a[g] = b(0, g * h + u);
        for (int e = 0; e < seq.cols(); ++e) a[g] += seq(t, e) * wi(e, g * h + u);
        for (int e = 0; e < h; ++e) a[g] += state[e] * wh(e, g * h + u);
      }
      cell[u] = sig(a[1]) * cell[u] + sig(a[0]) * std::tanh(a[2]);
      next[u] = sig(a[3]) * std::tanh(cell[u]);
    }
    state = next;
    for (int u = 0; u < h; ++u) out(t, u) = state[u];
  }
  return out;
}

TEST(Gru, MatchesScalarLoopsInBothDirections) {
  Rng rng(1);
  nn::ParameterSet params;
  const nn::Gru gru(params, "gru", 5, 4, rng);
  // Nonzero biases so that every term is exercised.
  for (const auto& [name, var] : params.items()) {
    Var v = var;
    v.mutable_value() = test::uniform_matrix(v.rows(), v.cols(), -0.5, 0.5, rng);
  }
  const Matrix seq = test::uniform_matrix(6, 5, -1, 1, rng);
  for (bool reverse : {false, true}) {
    const Matrix got = gru(ad::constant(seq), reverse).value();
    const Matrix want = gru_oracle(seq, params.get("gru.w_input").value(), params.get("gru.w_hidden").value(),
                                   params.get("gru.b_input").value(), params.get("gru.b_hidden").value(), reverse);
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12) << "reverse " << reverse;
  }
}

TEST(Lstm, MatchesScalarLoops) {
  Rng rng(2);
  nn::ParameterSet params;
  const nn::Lstm lstm(params, "lstm", 3, 5, rng);
  const Matrix seq = test::uniform_matrix(7, 3, -1, 1, rng);
  const Matrix got = lstm(ad::constant(seq)).value();
  const Matrix want = lstm_oracle(seq, params.get("lstm.w_input").value(), params.get("lstm.w_hidden").value(),
                                  params.get("lstm.bias").value());
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BiGru, ConcatenatesForwardAndBackward) {
  Rng rng(3);
  nn::ParameterSet params;
  const nn::BiGru bi(params, "bi", 2, 3, rng);
  const Matrix out = bi(ad::constant(test::uniform_matrix(4, 2, -1, 1, rng))).value();
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), bi.output_size());
  EXPECT_EQ(params.items().size(), 8u);
}

TEST(Linear, ComputesAffineMap) {
  Rng rng(4);
  nn::ParameterSet params;
  const nn::Linear lin(params, "lin", 3, 2, rng);
  const Matrix x = test::uniform_matrix(4, 3, -1, 1, rng);
  const Matrix want = (x * lin.weight().value()).rowwise() + lin.bias().value().row(0);
  EXPECT_TRUE(lin(ad::constant(x)).value().isApprox(want, 1e-14));
}

TEST(GlorotUniform, StaysInsideItsBound) {
  Rng rng(5);
  const Matrix w = nn::glorot_uniform(40, 30, 40, 30, rng);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 70.0));
  EXPECT_GT(w.cwiseAbs().maxCoeff(), 0.5 * std::sqrt(6.0 / 70.0));
}

TEST(ParameterSet, AdoptSharesLeaves) {
  Rng rng(6);
  nn::ParameterSet inner;
  const nn::Linear lin(inner, "lin", 2, 2, rng);
  nn::ParameterSet outer;
  outer.adopt("sub.", inner);
  ASSERT_TRUE(outer.contains("sub.lin.weight"));
  Var w = outer.get("sub.lin.weight");
  w.mutable_value().setConstant(3.0);
  EXPECT_EQ(lin.weight().value()(0, 0), 3.0);
  EXPECT_EQ(outer.scalar_count(), inner.scalar_count());
}

TEST(ParameterSet, DuplicateNamesAreRejected) {
  nn::ParameterSet params;
  params.add("w", Matrix::Zero(1, 1));
  EXPECT_THROW(params.add("w", Matrix::Zero(1, 1)), ContractViolation);
  nn::ParameterSet other;
  other.add("w", Matrix::Zero(1, 1));
  EXPECT_THROW(params.adopt("", other), ContractViolation);
}

TEST(ParameterSet, CopyValuesRequiresMatchingShapes) {
  nn::ParameterSet a, b, c;
  a.add("w", Matrix::Constant(2, 2, 1.0));
  b.add("w", Matrix::Constant(2, 2, 5.0));
  c.add("w", Matrix::Constant(3, 2, 5.0));
  a.copy_values_from(b);
  EXPECT_EQ(a.get("w").value()(1, 1), 5.0);
  EXPECT_THROW(a.copy_values_from(c), ContractViolation);
}

TEST(OneHot, HasASingleOne) {
  const Matrix m = nn::one_hot(2, 5);
  EXPECT_EQ(m.sum(), 1.0);
  EXPECT_EQ(m(0, 2), 1.0);
}

}  // namespace
}  // namespace opal
