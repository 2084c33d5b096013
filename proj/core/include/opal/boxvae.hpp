// SPDX-License-Identifier: Apache-2.0
//
// Conditional VAE over part-labelled box graphs. The encoder runs a two-layer
// GCN over (X, A), gates the row-pooled features with a category embedding and
// merges them with per-row skip features of the box columns. The decoder gates
// z with an embedding of (category, part presence) and emits presence
// probabilities, boxes and a symmetric adjacency.
#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "opal/dataset.hpp"
#include "opal/latent.hpp"
#include "opal/nn.hpp"

namespace opal::boxvae {

using ad::Matrix;
using ad::Var;
using dataset::Box;
using dataset::PartGraph;

inline constexpr double kIouEpsilon = 1e-6;
inline constexpr double kProbEpsilon = 1e-7;

/// Category (1-based id) plus the requested part-presence vector.
struct Conditioning {
  int category_id = 0;
  std::vector<std::uint8_t> presence;

  Matrix category_one_hot(int num_categories) const;
  /// [one-hot(category) | presence], 1 x (M + p).
  Matrix row(int num_categories) const;
  static Conditioning of(const PartGraph& g) { return {g.category_id, g.presence}; }
};

struct BoxVaeDims {
  int p_max = 0;
  int num_categories = 0;
  int gcn_hidden = 32;
  int gcn_out = 64;
  int skip_features = 16;
  int encoder_hidden = 128;
  int latent = kLatentDim;
  int decoder_hidden = 256;

  nlohmann::json to_json() const;
  static BoxVaeDims from_json(const nlohmann::json& j);
};

struct BoxDecodeVars {
  Var presence_probs;   // 1 x p
  Var boxes;            // p x 4
  Var adjacency_probs;  // p x p
};

struct BoxDecodeOutput {
  Matrix presence_probs;
  Matrix boxes;
  Matrix adjacency_probs;
};

class BoxVae {
 public:
  BoxVae(const BoxVaeDims& dims, std::uint64_t seed);

  const BoxVaeDims& dims() const { return dims_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

  /// Per-row affine map of the box columns (a 1x1 convolution over parts).
  Var skip_features(const Var& boxes) const;
  /// Pooled, category-gated GCN features concatenated with the flattened skip
  /// features; the layer that feeds the latent heads.
  Var encoder_features(const Var& features, const Matrix& adjacency, int category_id) const;
  /// ReLU hidden layer that feeds the latent heads.
  Var encoder_hidden(const Var& features, const Matrix& adjacency, int category_id) const;
  GaussianVars encode(const Var& features, const Matrix& adjacency, int category_id) const;
  GaussianVars encode(const PartGraph& g) const;
  BoxDecodeVars decode(const Var& z, const Conditioning& cond) const;

  GaussianParams encode_params(const PartGraph& g) const;
  BoxDecodeOutput decode_output(const Matrix& z, const Conditioning& cond) const;

  int encoder_feature_size() const { return dims_.gcn_out + dims_.p_max * dims_.skip_features; }

 private:
  BoxVaeDims dims_;
  nn::ParameterSet params_;
  Var gcn_w1_;
  Var gcn_w2_;
  nn::Gate category_gate_;
  nn::Linear skip_;
  nn::Linear encoder_hidden_;
  nn::Linear mu_head_;
  nn::Linear log_var_head_;
  nn::Gate latent_gate_;
  nn::Linear decoder1_;
  nn::Linear decoder2_;
  nn::Linear presence_head_;
  nn::Linear box_head_;
  nn::Linear adjacency_head_;
};

// --- reconstruction loss ----------------------------------------------------
// p below is always the global part count (rows of the graph).

struct ReconTerms {
  Var presence;
  Var boxes;
  Var pairwise;
  Var adjacency;
  Var total;
};

struct ReconBreakdown {
  double presence = 0.0;
  double boxes = 0.0;
  double pairwise = 0.0;
  double adjacency = 0.0;
  double total = 0.0;
};

/// -ln prod_k D_k^l_k (1 - D_k)^(1 - l_k), divided by p.
Var presence_nll(const Var& probs, const std::vector<std::uint8_t>& presence);
/// Sum over present parts of (MSE + IoU loss), divided by p.
Var box_terms(const Var& boxes_hat, const Matrix& boxes, const std::vector<std::uint8_t>& presence);
/// Sum over ordered present pairs m != n of (d_mn - d^_mn)^2, divided by p(p-1).
Var pairwise_center_loss(const Var& boxes_hat, const Matrix& boxes,
                         const std::vector<std::uint8_t>& presence);
/// Sum of elementwise BCE over all p^2 entries, divided by p^2.
Var adjacency_bce(const Var& probs, const Matrix& target);
ReconTerms recon_loss(const BoxDecodeVars& out, const PartGraph& target);

double presence_nll(const Matrix& probs, const std::vector<std::uint8_t>& presence);
/// -ln max(IoU, kIouEpsilon) for axis-aligned corner boxes.
double box_iou_loss(const Box& predicted, const Box& truth);
double box_mse(const Box& predicted, const Box& truth);
double pairwise_center_loss(const Matrix& boxes_hat, const Matrix& boxes,
                            const std::vector<std::uint8_t>& presence);
double adjacency_bce(const Matrix& probs, const Matrix& target);
ReconBreakdown boxvae_recon_loss(const BoxDecodeOutput& out, const PartGraph& target);

double box_iou(const Box& a, const Box& b);

}  // namespace opal::boxvae
