// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit tests and the acceptance runner: finite
// differences, random fixtures and small untrained model bundles.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "opal/boxvae.hpp"
#include "opal/dataset.hpp"
#include "opal/labelmap.hpp"
#include "opal/pipeline.hpp"
#include "opal/random.hpp"

namespace opal::test {

using ad::Matrix;

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f with respect to x(r, c); x is restored afterwards.
inline double central_difference(const std::function<double()>& f, Matrix& x, Eigen::Index r, Eigen::Index c,
                                 double h) {
  const double saved = x(r, c);
  x(r, c) = saved + h;
  const double up = f();
  x(r, c) = saved - h;
  const double down = f();
  x(r, c) = saved;
  return (up - down) / (2.0 * h);
}

/// One-sided slopes at x(r, c). Their disagreement flags a kink inside the
/// stencil, where a central difference is not a derivative.
struct OneSided {
  double forward = 0.0;
  double backward = 0.0;
};

inline OneSided one_sided_differences(const std::function<double()>& f, Matrix& x, Eigen::Index r,
                                      Eigen::Index c, double h) {
  const double saved = x(r, c);
  const double mid = f();
  x(r, c) = saved + h;
  const double up = f();
  x(r, c) = saved - h;
  const double down = f();
  x(r, c) = saved;
  return {(up - mid) / h, (mid - down) / h};
}

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Box with both sides at least `min_side`, inside [-1, 1].
inline dataset::Box random_box(Rng& rng, double min_side = 0.05) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  if (x1 - x0 < min_side) {
    x1 = std::min(1.0, x0 + min_side);
    x0 = x1 - min_side;
  }
  if (y1 - y0 < min_side) {
    y1 = std::min(1.0, y0 + min_side);
    y0 = y1 - min_side;
  }
  return {x0, y0, x1, y1};
}

/// Symmetric 0/1 matrix with zero diagonal.
inline Matrix random_adjacency(int p, double density, Rng& rng) {
  std::bernoulli_distribution edge(density);
  Matrix a = Matrix::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = i + 1; j < p; ++j) {
      if (edge(rng)) a(i, j) = a(j, i) = 1.0;
    }
  }
  return a;
}

/// Presence vector with at least one present part.
inline std::vector<std::uint8_t> random_presence(int p, Rng& rng) {
  std::bernoulli_distribution on(0.7);
  std::vector<std::uint8_t> presence(static_cast<std::size_t>(p));
  for (auto& v : presence) v = on(rng) ? 1 : 0;
  presence[std::uniform_int_distribution<int>(0, p - 1)(rng)] = 1;
  return presence;
}

/// Random part graph of p rows; absent rows are zero.
inline dataset::PartGraph random_graph(int p, int category_id, Rng& rng) {
  dataset::PartGraph g;
  g.category_id = category_id;
  g.presence = random_presence(p, rng);
  g.features = Matrix::Zero(p, 5);
  g.adjacency = Matrix::Zero(p, p);
  const Matrix a = random_adjacency(p, 0.4, rng);
  for (int k = 0; k < p; ++k) {
    if (!g.presence[static_cast<std::size_t>(k)]) continue;
    const dataset::Box b = random_box(rng);
    g.features.row(k) << 1.0, b.x_min, b.y_min, b.x_max, b.y_max;
    for (int j = 0; j < p; ++j) {
      if (g.presence[static_cast<std::size_t>(j)]) g.adjacency(k, j) = a(k, j);
    }
  }
  return g;
}

/// Small synthetic corpus shared by tests: two categories, split 75/15/10.
inline const dataset::Corpus& small_corpus() {
  static const dataset::Corpus corpus =
      dataset::split_corpus(dataset::synth_generate(dataset::SynthConfig::default_config(12), 5), 6);
  return corpus;
}

/// Untrained but fully shaped models for the schema of `corpus`.
inline std::shared_ptr<const pipeline::ModelBundle> untrained_bundle(const dataset::SchemaSet& schemas,
                                                                      std::uint64_t seed = 17) {
  boxvae::BoxVaeDims bd;
  bd.p_max = schemas.p_max();
  bd.num_categories = schemas.num_categories();
  labelmap::LabelMapDims md;
  md.p_max = schemas.p_max();
  md.num_categories = schemas.num_categories();
  return std::make_shared<const pipeline::ModelBundle>(
      schemas, std::make_shared<const boxvae::BoxVae>(bd, derive_seed(seed, 1)),
      std::make_shared<const labelmap::LabelMapVae>(md, derive_seed(seed, 2)));
}

/// Fresh empty directory below the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("opal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace opal::test
