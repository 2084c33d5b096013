// SPDX-License-Identifier: Apache-2.0
#include "opal/latent.hpp"

#include <cmath>

#include "opal/error.hpp"

namespace opal {

bool GaussianParams::valid() const {
  return mu.rows() == 1 && log_var.rows() == 1 && mu.cols() == log_var.cols() &&
         mu.allFinite() && !log_var.array().isNaN().any();
}

ad::Var reparameterize(const GaussianVars& g, const ad::Matrix& eps) {
  require(eps.rows() == g.mu.rows() && eps.cols() == g.mu.cols(), "eps shape must match mu");
  const ad::Var std_dev = ad::exp(ad::scale(ad::clamp(g.log_var, kLogVarMin, kLogVarMax), 0.5));
  return ad::add(g.mu, ad::mul(std_dev, ad::constant(eps)));
}

ad::Matrix reparameterize(const GaussianParams& g, Rng& rng) {
  const ad::Matrix eps = standard_normal(g.mu.rows(), g.mu.cols(), rng);
  const ad::Matrix std_dev =
      (0.5 * g.log_var.array().max(kLogVarMin).min(kLogVarMax)).exp().matrix();
  return g.mu + std_dev.cwiseProduct(eps);
}

ad::Matrix reparameterize(const GaussianParams& g, std::uint64_t seed) {
  Rng rng(seed);
  return reparameterize(g, rng);
}

}  // namespace opal
