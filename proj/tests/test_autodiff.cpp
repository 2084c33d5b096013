// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <functional>
#include <string>
#include <vector>

#include "opal/autodiff.hpp"
#include "opal/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace opal {
namespace {

using ad::Matrix;
using ad::Var;
using Op = std::function<Var(const std::vector<Var>&)>;

struct Input {
  Eigen::Index rows;
  Eigen::Index cols;
  double lo;
  double hi;
};

/// Backprop of sum(op(inputs) * probe) against central differences for every
/// input entry.
void expect_gradients(const std::string& name, const Op& op, const std::vector<Input>& shapes,
                      std::uint64_t seed = 1, double tol = 1e-6) {
  Rng rng(seed);
  std::vector<Matrix> values;
  for (const Input& s : shapes) values.push_back(test::uniform_matrix(s.rows, s.cols, s.lo, s.hi, rng));
  const auto forward = [&](bool grad) {
    std::vector<Var> vars;
    for (const Matrix& v : values) vars.emplace_back(v, grad);
    return std::pair{vars, op(vars)};
  };
  auto [vars, out] = forward(true);
  const Matrix probe = test::uniform_matrix(out.rows(), out.cols(), -1.0, 1.0, rng);
  ad::backward(ad::sum(ad::mul(out, ad::constant(probe))));
  const auto value = [&] {
    ad::NoGradGuard guard;
    return (forward(false).second.value().array() * probe.array()).sum();
  };
  for (std::size_t k = 0; k < values.size(); ++k) {
    for (Eigen::Index i = 0; i < values[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < values[k].cols(); ++j) {
        const double fd = test::central_difference(value, values[k], i, j, 1e-6);
        const double analytic = vars[k].grad().size() ? vars[k].grad()(i, j) : 0.0;
        ASSERT_LT(test::relative_error(analytic, fd, 1e-6), tol)
            << name << " input " << k << " entry " << i << "," << j << " analytic " << analytic << " fd " << fd;
      }
    }
  }
}

TEST(AutodiffGradients, Elementwise) {
  expect_gradients("add", [](auto& v) { return ad::add(v[0], v[1]); }, {{3, 4, -1, 1}, {3, 4, -1, 1}});
  expect_gradients("sub", [](auto& v) { return ad::sub(v[0], v[1]); }, {{3, 4, -1, 1}, {3, 4, -1, 1}});
  expect_gradients("mul", [](auto& v) { return ad::mul(v[0], v[1]); }, {{3, 4, -1, 1}, {3, 4, -1, 1}});
  expect_gradients("div", [](auto& v) { return ad::div(v[0], v[1]); }, {{3, 4, -1, 1}, {3, 4, 0.5, 2}});
  expect_gradients("scale", [](auto& v) { return ad::scale(v[0], -2.5); }, {{3, 4, -1, 1}});
  expect_gradients("add_scalar", [](auto& v) { return ad::add_scalar(v[0], 0.7); }, {{3, 4, -1, 1}});
  expect_gradients("sigmoid", [](auto& v) { return ad::sigmoid(v[0]); }, {{3, 4, -3, 3}});
  expect_gradients("tanh", [](auto& v) { return ad::tanh(v[0]); }, {{3, 4, -3, 3}});
  expect_gradients("exp", [](auto& v) { return ad::exp(v[0]); }, {{3, 4, -2, 2}});
  expect_gradients("log", [](auto& v) { return ad::log(v[0]); }, {{3, 4, 0.2, 3}});
  expect_gradients("square", [](auto& v) { return ad::square(v[0]); }, {{3, 4, -2, 2}});
  expect_gradients("sqrt", [](auto& v) { return ad::sqrt(v[0]); }, {{3, 4, 0.2, 3}});
}

TEST(AutodiffGradients, PiecewiseAwayFromKinks) {
  expect_gradients("relu+", [](auto& v) { return ad::relu(v[0]); }, {{3, 4, 0.1, 2}});
  expect_gradients("relu-", [](auto& v) { return ad::relu(v[0]); }, {{3, 4, -2, -0.1}});
  expect_gradients("clamp", [](auto& v) { return ad::clamp(v[0], -0.5, 0.5); }, {{3, 4, -0.4, 0.4}});
  expect_gradients("minimum", [](auto& v) { return ad::minimum(v[0], v[1]); }, {{3, 4, -1, -0.1}, {3, 4, 0.1, 1}});
  expect_gradients("maximum", [](auto& v) { return ad::maximum(v[0], v[1]); }, {{3, 4, -1, -0.1}, {3, 4, 0.1, 1}});
}

TEST(AutodiffGradients, ReductionsAndShapes) {
  expect_gradients("matmul", [](auto& v) { return ad::matmul(v[0], v[1]); }, {{3, 5, -1, 1}, {5, 2, -1, 1}});
  expect_gradients("add_row", [](auto& v) { return ad::add_row(v[0], v[1]); }, {{3, 4, -1, 1}, {1, 4, -1, 1}});
  expect_gradients("mul_row", [](auto& v) { return ad::mul_row(v[0], v[1]); }, {{3, 4, -1, 1}, {1, 4, -1, 1}});
  expect_gradients("sum", [](auto& v) { return ad::sum(v[0]); }, {{3, 4, -1, 1}});
  expect_gradients("mean", [](auto& v) { return ad::mean(v[0]); }, {{3, 4, -1, 1}});
  expect_gradients("sum_rows", [](auto& v) { return ad::sum_rows(v[0]); }, {{3, 4, -1, 1}});
  expect_gradients("mean_rows", [](auto& v) { return ad::mean_rows(v[0]); }, {{3, 4, -1, 1}});
  expect_gradients("sum_cols", [](auto& v) { return ad::sum_cols(v[0]); }, {{3, 4, -1, 1}});
  expect_gradients("transpose", [](auto& v) { return ad::transpose(v[0]); }, {{3, 4, -1, 1}});
  expect_gradients("reshape", [](auto& v) { return ad::reshape(v[0], 2, 6); }, {{3, 4, -1, 1}});
  expect_gradients("concat_cols", [](auto& v) { return ad::concat_cols({v[0], v[1]}); }, {{3, 4, -1, 1}, {3, 2, -1, 1}});
  expect_gradients("concat_rows", [](auto& v) { return ad::concat_rows({v[0], v[1]}); }, {{3, 4, -1, 1}, {1, 4, -1, 1}});
  expect_gradients("slice_rows", [](auto& v) { return ad::slice_rows(v[0], 1, 2); }, {{4, 3, -1, 1}});
  expect_gradients("slice_cols", [](auto& v) { return ad::slice_cols(v[0], 1, 2); }, {{3, 4, -1, 1}});
  expect_gradients("gather_rows", [](auto& v) { return ad::gather_rows(v[0], {2, 0, 2}); }, {{4, 3, -1, 1}});
  expect_gradients("scatter_rows", [](auto& v) { return ad::scatter_rows(v[0], {3, 1}, 5); }, {{2, 3, -1, 1}});
  expect_gradients("replicate_rows", [](auto& v) { return ad::replicate_rows(v[0], 4); }, {{1, 3, -1, 1}});
  expect_gradients("pairwise_diff", [](auto& v) { return ad::pairwise_diff(v[0]); }, {{5, 1, -1, 1}});
  expect_gradients("softmax_channels", [](auto& v) { return ad::softmax_channels(v[0], 3); }, {{2, 12, -2, 2}});
  expect_gradients("log_softmax_channels", [](auto& v) { return ad::log_softmax_channels(v[0], 2); },
                   {{2, 10, -2, 2}});
}

TEST(AutodiffGradients, Convolutions) {
  const ad::ConvGeometry conv{2, 3, 6, 5, 3, 2, 1};
  expect_gradients("conv2d", [&](auto& v) { return ad::conv2d(v[0], v[1], v[2], conv); },
                   {{2, 2 * 6 * 5, -1, 1}, {3, 2 * 9, -1, 1}, {1, 3, -1, 1}});
  const ad::ConvGeometry deconv{3, 2, 3, 4, 4, 2, 1};
  expect_gradients("conv_transpose2d", [&](auto& v) { return ad::conv_transpose2d(v[0], v[1], v[2], deconv); },
                   {{2, 3 * 3 * 4, -1, 1}, {2 * 16, 3, -1, 1}, {1, 2, -1, 1}});
}

TEST(AutodiffConv, MatchesDirectLoops) {
  Rng rng(4);
  for (const ad::ConvGeometry g : {ad::ConvGeometry{1, 4, 8, 8, 3, 1, 1}, ad::ConvGeometry{3, 2, 9, 7, 4, 2, 1},
                                   ad::ConvGeometry{2, 2, 5, 5, 5, 1, 0}}) {
    const Matrix x = test::uniform_matrix(2, g.in_channels * g.in_height * g.in_width, -1, 1, rng);
    const Matrix w = test::uniform_matrix(g.out_channels, g.in_channels * g.kernel * g.kernel, -1, 1, rng);
    const Matrix b = test::uniform_matrix(1, g.out_channels, -1, 1, rng);
    const Matrix y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), g).value();
    ASSERT_EQ(y.cols(), g.out_channels * g.conv_out_height() * g.conv_out_width());
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      const std::vector<double> image(x.row(n).data(), x.row(n).data() + x.cols());
      const std::vector<double> want = oracle::conv2d(image, w, b, g.in_channels, g.out_channels, g.in_height,
                                                      g.in_width, g.kernel, g.stride, g.pad);
      for (Eigen::Index i = 0; i < y.cols(); ++i) EXPECT_NEAR(y(n, i), want[static_cast<std::size_t>(i)], 1e-12);
    }
  }
}

// <conv(x; W), y> = <x, conv_transpose(y; W^T)> with zero bias.
TEST(AutodiffConv, TransposeIsTheAdjoint) {
  Rng rng(5);
  const ad::ConvGeometry conv{3, 4, 8, 8, 4, 2, 1};
  const ad::ConvGeometry deconv{4, 3, conv.conv_out_height(), conv.conv_out_width(), 4, 2, 1};
  ASSERT_EQ(deconv.transposed_out_height(), conv.in_height);
  const Matrix x = test::uniform_matrix(1, 3 * 64, -1, 1, rng);
  const Matrix y = test::uniform_matrix(1, 4 * deconv.in_height * deconv.in_width, -1, 1, rng);
  const Matrix w = test::uniform_matrix(4, 3 * 16, -1, 1, rng);
  const Matrix cx = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(Matrix::Zero(1, 4)), conv).value();
  const Matrix ty =
      ad::conv_transpose2d(ad::constant(y), ad::constant(w.transpose()), ad::constant(Matrix::Zero(1, 3)), deconv)
          .value();
  EXPECT_NEAR((cx.array() * y.array()).sum(), (x.array() * ty.array()).sum(), 1e-10);
}

TEST(Autodiff, SharedSubexpressionsAccumulate) {
  Var x(Matrix::Constant(1, 1, 3.0), true);
  const Var y = ad::add(ad::mul(x, x), x);  // x^2 + x
  ad::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  Var x(Matrix::Constant(2, 2, 1.0), true);
  {
    ad::NoGradGuard guard;
    EXPECT_FALSE(ad::grad_enabled());
    const Var y = ad::square(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ad::grad_enabled());
  EXPECT_TRUE(ad::square(x).requires_grad());
}

TEST(Autodiff, SoftmaxChannelsIsASimplexPerPixel) {
  Rng rng(6);
  const Matrix logits = test::uniform_matrix(3, 4 * 10, -5, 5, rng);
  const Matrix s = ad::softmax_channels(ad::constant(logits), 4).value();
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index i = 0; i < 10; ++i) {
      double total = 0.0;
      for (Eigen::Index c = 0; c < 4; ++c) {
        EXPECT_GE(s(r, c * 10 + i), 0.0);
        total += s(r, c * 10 + i);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Autodiff, ShapeMismatchIsAContractViolation) {
  EXPECT_THROW(ad::matmul(ad::constant(Matrix::Zero(2, 3)), ad::constant(Matrix::Zero(2, 3))), ContractViolation);
  EXPECT_THROW(ad::add(ad::constant(Matrix::Zero(2, 3)), ad::constant(Matrix::Zero(3, 2))), ContractViolation);
}

}  // namespace
}  // namespace opal
