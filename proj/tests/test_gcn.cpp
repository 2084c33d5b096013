// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "criteria.hpp"
#include "opal/error.hpp"
#include "opal/gcn.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace opal {
namespace {

using ad::Matrix;
using ad::Var;

TEST(Gcn, PrimarySuite) {
  const criteria::Verdict v = criteria::gcn_suite();
  EXPECT_TRUE(v.accepted()) << v.detail;
}

TEST(Gcn, NormalizedAdjacencyIsSymmetricWithUnitSpectralBound) {
  Rng rng(1);
  for (int p = 1; p <= 8; ++p) {
    const Matrix a_hat = gcn::normalize_adjacency(test::random_adjacency(p, 0.5, rng));
    EXPECT_TRUE(a_hat.isApprox(a_hat.transpose(), 1e-14));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig{Eigen::MatrixXd(a_hat)};
    EXPECT_LE(eig.eigenvalues().cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
}

TEST(Gcn, IsolatedNodesKeepTheirOwnFeatures) {
  const Matrix x = (Matrix(3, 2) << 1, -2, 3, 4, -5, 6).finished();
  const Matrix w = Matrix::Identity(2, 2);
  const Matrix out = gcn::gcn_layer(x, gcn::normalize_adjacency(Matrix::Zero(3, 3)), w);
  EXPECT_TRUE(out.isApprox(x.cwiseMax(0.0)));
}

TEST(Gcn, SingleEdgeAveragesBothEndpoints) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 1) = a(1, 0) = 1.0;
  const Matrix x = (Matrix(2, 1) << 2.0, 4.0).finished();
  const Matrix out = gcn::gcn_layer(x, gcn::normalize_adjacency(a), Matrix::Ones(1, 1));
  EXPECT_NEAR(out(0, 0), 3.0, 1e-12);
  EXPECT_NEAR(out(1, 0), 3.0, 1e-12);
}

TEST(Gcn, RejectsMismatchedShapes) {
  const Matrix a_hat = gcn::normalize_adjacency(Matrix::Zero(3, 3));
  EXPECT_THROW(gcn::gcn_layer(Matrix::Zero(4, 5), a_hat, Matrix::Zero(5, 2)), ContractViolation);
  EXPECT_THROW(gcn::gcn_layer(Matrix::Zero(3, 5), a_hat, Matrix::Zero(4, 2)), ContractViolation);
}

TEST(Gcn, WeightGradientsMatchFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const int p = 6;
    const Matrix x = test::uniform_matrix(p, 5, -1, 1, rng);
    const Matrix a_hat = gcn::normalize_adjacency(test::random_adjacency(p, 0.4, rng));
    Matrix w1 = test::uniform_matrix(5, 8, -0.6, 0.6, rng);
    Matrix w2 = test::uniform_matrix(8, 4, -0.6, 0.6, rng);
    const Matrix probe = test::uniform_matrix(p, 4, -1, 1, rng);
    const auto value = [&] {
      return (gcn::gcn_layer(gcn::gcn_layer(x, a_hat, w1), a_hat, w2).array() * probe.array()).sum();
    };
    Var v1(w1, true), v2(w2, true);
    ad::backward(ad::sum(ad::mul(gcn::gcn_forward(ad::constant(x), a_hat, v1, v2), ad::constant(probe))));
    for (auto [m, var] : {std::pair{&w1, &v1}, {&w2, &v2}}) {
      for (Eigen::Index i = 0; i < m->rows(); ++i) {
        for (Eigen::Index j = 0; j < m->cols(); ++j) {
          const test::OneSided s = test::one_sided_differences(value, *m, i, j, 1e-5);
          if (std::abs(s.forward - s.backward) > 1e-6) continue;  // stencil crosses a ReLU kink
          const double fd = test::central_difference(value, *m, i, j, 1e-5);
          EXPECT_LT(test::relative_error(var->grad()(i, j), fd, 1e-6), 1e-4);
        }
      }
    }
  }
}

TEST(Gcn, DenseAndVarFormsAgree) {
  Rng rng(3);
  const Matrix x = test::uniform_matrix(5, 5, -1, 1, rng);
  const Matrix a = test::random_adjacency(5, 0.5, rng);
  const gcn::GcnWeights w{test::uniform_matrix(5, 6, -1, 1, rng), test::uniform_matrix(6, 3, -1, 1, rng)};
  const Matrix dense = gcn::gcn_forward(x, a, w);
  const Var var = gcn::gcn_forward(ad::constant(x), gcn::normalize_adjacency(a), ad::constant(w.w1), ad::constant(w.w2));
  EXPECT_TRUE(dense.isApprox(var.value(), 1e-14));
}

}  // namespace
}  // namespace opal
