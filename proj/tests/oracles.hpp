// SPDX-License-Identifier: Apache-2.0
//
// Loop-based reference implementations. They share no code with the library
// and favour plain indexing over speed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "opal/autodiff.hpp"

namespace opal::oracle {

using ad::Matrix;

struct BoxLossTerms {
  double presence = 0.0;
  double boxes = 0.0;
  double pairwise = 0.0;
  double adjacency = 0.0;
  double total = 0.0;
};

inline double bce(double prob, double target) {
  const double q = std::min(std::max(prob, 1e-7), 1.0 - 1e-7);
  return -(target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
}

inline double iou(double ax0, double ay0, double ax1, double ay1, double bx0, double by0, double bx1, double by1) {
  double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw < 0.0) iw = 0.0;
  if (ih < 0.0) ih = 0.0;
  double aw = ax1 - ax0, ah = ay1 - ay0;
  if (aw < 0.0) aw = 0.0;
  if (ah < 0.0) ah = 0.0;
  const double inter = iw * ih;
  return inter / (aw * ah + (bx1 - bx0) * (by1 - by0) - inter);
}

/// Reconstruction loss of one decoded box graph; `truth` is p x 4.
inline BoxLossTerms boxvae_recon(const Matrix& presence_probs, const Matrix& boxes_hat, const Matrix& adjacency_probs,
                                 const Matrix& truth, const Matrix& adjacency,
                                 const std::vector<std::uint8_t>& presence) {
  const int p = static_cast<int>(truth.rows());
  BoxLossTerms t;
  for (int k = 0; k < p; ++k) t.presence += bce(presence_probs(0, k), presence[k] ? 1.0 : 0.0);
  t.presence /= p;

  for (int k = 0; k < p; ++k) {
    if (!presence[k]) continue;
    double mse = 0.0;
    for (int j = 0; j < 4; ++j) mse += (truth(k, j) - boxes_hat(k, j)) * (truth(k, j) - boxes_hat(k, j));
    const double overlap = iou(boxes_hat(k, 0), boxes_hat(k, 1), boxes_hat(k, 2), boxes_hat(k, 3), truth(k, 0),
                               truth(k, 1), truth(k, 2), truth(k, 3));
    t.boxes += mse - std::log(std::max(overlap, 1e-6));
  }
  t.boxes /= p;

  for (int m = 0; m < p; ++m) {
    for (int n = 0; n < p; ++n) {
      if (m == n || !presence[m] || !presence[n]) continue;
      const double d = std::hypot((truth(m, 0) + truth(m, 2)) / 2 - (truth(n, 0) + truth(n, 2)) / 2,
                                  (truth(m, 1) + truth(m, 3)) / 2 - (truth(n, 1) + truth(n, 3)) / 2);
      const double d_hat = std::hypot((boxes_hat(m, 0) + boxes_hat(m, 2)) / 2 - (boxes_hat(n, 0) + boxes_hat(n, 2)) / 2,
                                      (boxes_hat(m, 1) + boxes_hat(m, 3)) / 2 - (boxes_hat(n, 1) + boxes_hat(n, 3)) / 2);
      t.pairwise += (d - d_hat) * (d - d_hat);
    }
  }
  t.pairwise /= static_cast<double>(p) * (p - 1);

  for (int m = 0; m < p; ++m) {
    for (int n = 0; n < p; ++n) t.adjacency += bce(adjacency_probs(m, n), adjacency(m, n));
  }
  t.adjacency /= static_cast<double>(p) * p;

  t.total = t.presence + t.boxes + t.pairwise + t.adjacency;
  return t;
}

/// One graph convolution by explicit neighbour aggregation:
/// h'_i = ReLU(sum over j in N(i) + {i} of h_j W / sqrt(d_i d_j)), d = 1 + |N|.
inline Matrix gcn_layer(const Matrix& h, const Matrix& adjacency, const Matrix& w) {
  const int p = static_cast<int>(h.rows());
  std::vector<double> degree(static_cast<std::size_t>(p), 1.0);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      if (adjacency(i, j) != 0.0) degree[i] += 1.0;
    }
  }
  Matrix out = Matrix::Zero(p, w.cols());
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      if (i != j && adjacency(i, j) == 0.0) continue;
      const double norm = 1.0 / std::sqrt(degree[i] * degree[j]);
      for (int f = 0; f < w.cols(); ++f) {
        double acc = 0.0;
        for (int e = 0; e < h.cols(); ++e) acc += h(j, e) * w(e, f);
        out(i, f) += norm * acc;
      }
    }
  }
  for (int i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, out.data()[i]);
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double top = x[0];
  for (double v : x) top = std::max(top, v);
  std::vector<double> y(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (y[i] = std::exp(x[i] - top));
  for (double& v : y) v /= total;
  return y;
}

/// KL(N(mu, e^lv) || N(0, 1)) summed over entries.
inline double kl_gaussian(const Matrix& mu, const Matrix& log_var) {
  double kl = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    const double m = mu.data()[i], lv = log_var.data()[i];
    kl += 0.5 * (std::exp(lv) + m * m - 1.0 - lv);
  }
  return kl;
}

/// Mean two-class cross-entropy over present rows; logits hold a background
/// plane then a foreground plane per row.
inline double mask_cross_entropy(const Matrix& logits, const Matrix& masks, const std::vector<std::uint8_t>& presence) {
  const int n = static_cast<int>(masks.cols());
  double total = 0.0;
  long count = 0;
  for (int r = 0; r < masks.rows(); ++r) {
    if (!presence[r]) continue;
    for (int i = 0; i < n; ++i) {
      const double bg = logits(r, i), fg = logits(r, n + i);
      const double top = std::max(bg, fg);
      const double lse = top + std::log(std::exp(bg - top) + std::exp(fg - top));
      const double t = masks(r, i);
      total -= t * (fg - lse) + (1.0 - t) * (bg - lse);
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

/// Direct convolution; x is Cin x H x W flattened, weight Cout x (Cin k k).
inline std::vector<double> conv2d(const std::vector<double>& x, const Matrix& weight, const Matrix& bias, int cin,
                                  int cout, int height, int width, int k, int stride, int pad) {
  const int oh = (height + 2 * pad - k) / stride + 1;
  const int ow = (width + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout) * oh * ow, 0.0);
  for (int o = 0; o < cout; ++o) {
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) {
        double acc = bias(0, o);
        for (int c = 0; c < cin; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = yy * stride - pad + ky, ix = xx * stride - pad + kx;
              if (iy < 0 || iy >= height || ix < 0 || ix >= width) continue;
              acc += weight(o, (c * k + ky) * k + kx) * x[(static_cast<std::size_t>(c) * height + iy) * width + ix];
            }
          }
        }
        y[(static_cast<std::size_t>(o) * oh + yy) * ow + xx] = acc;
      }
    }
  }
  return y;
}

}  // namespace opal::oracle
