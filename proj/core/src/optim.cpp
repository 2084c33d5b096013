// SPDX-License-Identifier: Apache-2.0
#include "opal/optim.hpp"

#include <cmath>

namespace opal::optim {

double clip_gradients(nn::ParameterSet& params, double max_norm) {
  if (max_norm <= 0.0) return 1.0;
  double total = 0.0;
  for (const auto& [name, p] : params.items()) {
    if (p.grad().size() > 0) total += p.grad().squaredNorm();
  }
  const double norm = std::sqrt(total);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto [name, p] : params.items()) {
    if (p.grad().size() > 0) p.mutable_grad() *= factor;
  }
  return factor;
}

Adam::Adam(nn::ParameterSet& params, AdamOptions options) : params_(params), options_(options) {
  for (const auto& [name, p] : params_.items()) {
    m_.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  clip_gradients(params_, options_.clip_norm);
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double lr_t = options_.learning_rate / (1.0 - std::pow(b1, static_cast<double>(t_)));
  const double inv_c2 = 1.0 / (1.0 - std::pow(b2, static_cast<double>(t_)));
  const double eps = options_.epsilon;
  std::size_t i = 0;
  for (auto [name, p] : params_.items()) {
    if (p.grad().size() > 0) {
      const double* __restrict g = p.grad().data();
      double* __restrict m = m_[i].data();
      double* __restrict v = v_[i].data();
      double* __restrict w = p.mutable_value().data();
      const Eigen::Index n = p.grad().size();
      for (Eigen::Index k = 0; k < n; ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        w[k] -= lr_t * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
      }
    }
    ++i;
  }
}

Adagrad::Adagrad(nn::ParameterSet& params, AdagradOptions options)
    : params_(params), options_(options) {
  for (const auto& [name, p] : params_.items()) {
    sum_sq_.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adagrad::step() {
  clip_gradients(params_, options_.clip_norm);
  std::size_t i = 0;
  for (auto [name, p] : params_.items()) {
    if (p.grad().size() > 0) {
      const ad::Matrix& g = p.grad();
      sum_sq_[i] += g.cwiseAbs2();
      p.mutable_value().array() -=
          options_.learning_rate * g.array() / (sum_sq_[i].array().sqrt() + options_.epsilon);
    }
    ++i;
  }
}

}  // namespace opal::optim
