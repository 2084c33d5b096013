// SPDX-License-Identifier: Apache-2.0
#include "opal/gcn.hpp"

#include <cmath>

#include "opal/error.hpp"

namespace opal::gcn {

Matrix normalize_adjacency(const Matrix& adjacency) {
  require(adjacency.rows() == adjacency.cols(), "adjacency must be square");
  const auto p = adjacency.rows();
  Matrix a_tilde = adjacency + Matrix::Identity(p, p);
  // Self-loops make every degree at least one.
  const Eigen::VectorXd inv_sqrt_degree = a_tilde.rowwise().sum().array().rsqrt();
  return inv_sqrt_degree.asDiagonal() * a_tilde * inv_sqrt_degree.asDiagonal();
}

Var gcn_layer(const Var& h, const Matrix& a_hat, const Var& w) {
  require(a_hat.rows() == h.rows() && a_hat.cols() == h.rows(),
          "gcn_layer: adjacency does not match node count");
  require(h.cols() == w.rows(), "gcn_layer: feature width does not match weight rows");
  return ad::relu(ad::matmul(ad::constant(a_hat), ad::matmul(h, w)));
}

Var gcn_forward(const Var& x, const Matrix& a_hat, const Var& w1, const Var& w2) {
  return gcn_layer(gcn_layer(x, a_hat, w1), a_hat, w2);
}

Matrix gcn_layer(const Matrix& h, const Matrix& a_hat, const Matrix& w) {
  ad::NoGradGuard guard;
  return gcn_layer(ad::constant(h), a_hat, ad::constant(w)).value();
}

Matrix gcn_forward(const Matrix& x, const Matrix& adjacency, const GcnWeights& weights) {
  ad::NoGradGuard guard;
  const Matrix a_hat = normalize_adjacency(adjacency);
  return gcn_forward(ad::constant(x), a_hat, ad::constant(weights.w1), ad::constant(weights.w2))
      .value();
}

}  // namespace opal::gcn
