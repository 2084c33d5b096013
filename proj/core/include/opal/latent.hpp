// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "opal/autodiff.hpp"
#include "opal/random.hpp"

namespace opal {

inline constexpr int kLatentDim = 128;
// log-variance is clamped to this range before exponentiation.
inline constexpr double kLogVarMin = -60.0;
inline constexpr double kLogVarMax = 30.0;

/// Diagonal Gaussian; both members are 1 x dim.
struct GaussianParams {
  ad::Matrix mu;
  ad::Matrix log_var;

  int dim() const { return static_cast<int>(mu.cols()); }
  bool valid() const;
};

struct GaussianVars {
  ad::Var mu;
  ad::Var log_var;

  GaussianParams values() const { return {mu.value(), log_var.value()}; }
};

/// z = mu + exp(log_var / 2) * eps with a caller-provided eps.
ad::Var reparameterize(const GaussianVars& g, const ad::Matrix& eps);
ad::Matrix reparameterize(const GaussianParams& g, Rng& rng);
ad::Matrix reparameterize(const GaussianParams& g, std::uint64_t seed);

}  // namespace opal
