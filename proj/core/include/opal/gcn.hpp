// SPDX-License-Identifier: Apache-2.0
//
// Graph convolution with the symmetric self-loop normalization
//   H' = ReLU(D^-1/2 (A + I) D^-1/2 H W).
#pragma once

#include "opal/autodiff.hpp"

namespace opal::gcn {

using ad::Matrix;
using ad::Var;

inline constexpr int kInputFeatures = 5;

struct GcnWeights {
  Matrix w1;  // F0 x F1
  Matrix w2;  // F1 x F2
};

/// A must be square, symmetric with a zero diagonal.
Matrix normalize_adjacency(const Matrix& adjacency);

Matrix gcn_layer(const Matrix& h, const Matrix& a_hat, const Matrix& w);
Matrix gcn_forward(const Matrix& x, const Matrix& adjacency, const GcnWeights& weights);

// Differentiable forms; a_hat is already normalized.
Var gcn_layer(const Var& h, const Matrix& a_hat, const Var& w);
Var gcn_forward(const Var& x, const Matrix& a_hat, const Var& w1, const Var& w2);

}  // namespace opal::gcn
