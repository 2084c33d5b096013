// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "opal/autodiff.hpp"

namespace opal {

using Rng = std::mt19937_64;

/// splitmix64 mix of (seed, stream); used to give independent, reproducible
/// streams to each consumer of a user-facing seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

ad::Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Uniform draw from the open interval (0, 1).
double open_uniform(Rng& rng);

/// Standard Gumbel draw (location 0, scale 1): -ln(-ln u).
double standard_gumbel(Rng& rng);

}  // namespace opal
