// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "opal/nn.hpp"

namespace opal::optim {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class Adam {
 public:
  Adam(nn::ParameterSet& params, AdamOptions options);
  void step();
  void zero_grad() { params_.zero_grad(); }
  long steps_taken() const { return t_; }

 private:
  nn::ParameterSet& params_;
  AdamOptions options_;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
  long t_ = 0;
};

struct AdagradOptions {
  double learning_rate = 1e-2;
  double epsilon = 1e-10;
  double clip_norm = 0.0;
};

class Adagrad {
 public:
  Adagrad(nn::ParameterSet& params, AdagradOptions options);
  void step();
  void zero_grad() { params_.zero_grad(); }

 private:
  nn::ParameterSet& params_;
  AdagradOptions options_;
  std::vector<ad::Matrix> sum_sq_;
};

/// Returns the factor applied (1 when no clipping happened).
double clip_gradients(nn::ParameterSet& params, double max_norm);

}  // namespace opal::optim
