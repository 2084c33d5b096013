// SPDX-License-Identifier: Apache-2.0
#include "opal/boxvae.hpp"

#include <algorithm>
#include <cmath>

#include "opal/error.hpp"
#include "opal/gcn.hpp"

namespace opal::boxvae {

using ad::Index;

Matrix Conditioning::category_one_hot(int num_categories) const {
  return nn::one_hot(category_id - 1, num_categories);
}

Matrix Conditioning::row(int num_categories) const {
  Matrix out(1, num_categories + static_cast<Index>(presence.size()));
  out.leftCols(num_categories) = category_one_hot(num_categories);
  for (std::size_t k = 0; k < presence.size(); ++k) {
    out(0, num_categories + static_cast<Index>(k)) = presence[k] ? 1.0 : 0.0;
  }
  return out;
}

nlohmann::json BoxVaeDims::to_json() const {
  return {{"p_max", p_max},
          {"num_categories", num_categories},
          {"gcn_hidden", gcn_hidden},
          {"gcn_out", gcn_out},
          {"skip_features", skip_features},
          {"encoder_hidden", encoder_hidden},
          {"latent", latent},
          {"decoder_hidden", decoder_hidden}};
}

BoxVaeDims BoxVaeDims::from_json(const nlohmann::json& j) {
  BoxVaeDims d;
  d.p_max = j.at("p_max").get<int>();
  d.num_categories = j.at("num_categories").get<int>();
  d.gcn_hidden = j.value("gcn_hidden", d.gcn_hidden);
  d.gcn_out = j.value("gcn_out", d.gcn_out);
  d.skip_features = j.value("skip_features", d.skip_features);
  d.encoder_hidden = j.value("encoder_hidden", d.encoder_hidden);
  d.latent = j.value("latent", d.latent);
  d.decoder_hidden = j.value("decoder_hidden", d.decoder_hidden);
  return d;
}

BoxVae::BoxVae(const BoxVaeDims& dims, std::uint64_t seed) : dims_(dims) {
  require(dims.p_max > 0 && dims.num_categories > 0, "BoxVae needs p_max and categories");
  Rng rng(seed);
  const int p = dims.p_max;
  const int m = dims.num_categories;
  gcn_w1_ = params_.add("encoder.gc1.weight",
                        nn::glorot_uniform(gcn::kInputFeatures, dims.gcn_hidden,
                                           gcn::kInputFeatures, dims.gcn_hidden, rng));
  gcn_w2_ = params_.add("encoder.gc2.weight", nn::glorot_uniform(dims.gcn_hidden, dims.gcn_out,
                                                                 dims.gcn_hidden, dims.gcn_out, rng));
  category_gate_ = nn::Gate(params_, "encoder.category_gate", m, dims.gcn_out, rng);
  skip_ = nn::Linear(params_, "encoder.skip", 4, dims.skip_features, rng);
  encoder_hidden_ = nn::Linear(params_, "encoder.hidden", encoder_feature_size(),
                               dims.encoder_hidden, rng);
  mu_head_ = nn::Linear(params_, "encoder.mu", dims.encoder_hidden, dims.latent, rng);
  log_var_head_ = nn::Linear(params_, "encoder.log_var", dims.encoder_hidden, dims.latent, rng);
  latent_gate_ = nn::Gate(params_, "decoder.condition_gate", m + p, dims.latent, rng);
  decoder1_ = nn::Linear(params_, "decoder.fc1", dims.latent, dims.decoder_hidden, rng);
  decoder2_ = nn::Linear(params_, "decoder.fc2", dims.decoder_hidden, dims.decoder_hidden, rng);
  presence_head_ = nn::Linear(params_, "decoder.presence", dims.decoder_hidden, p, rng);
  box_head_ = nn::Linear(params_, "decoder.boxes", dims.decoder_hidden, 4 * p, rng);
  adjacency_head_ = nn::Linear(params_, "decoder.adjacency", dims.decoder_hidden, p * p, rng);
}

Var BoxVae::skip_features(const Var& boxes) const {
  require(boxes.cols() == 4, "skip_features expects p x 4 boxes");
  return skip_(boxes);
}

Var BoxVae::encoder_features(const Var& features, const Matrix& adjacency, int category_id) const {
  require(features.rows() == dims_.p_max && features.cols() == gcn::kInputFeatures,
          "encoder expects a p_max x 5 feature matrix");
  const Matrix a_hat = gcn::normalize_adjacency(adjacency);
  const Var h = gcn::gcn_forward(features, a_hat, gcn_w1_, gcn_w2_);
  const Var gate = category_gate_(ad::constant(nn::one_hot(category_id - 1, dims_.num_categories)));
  const Var gated = ad::mul(ad::mean_rows(h), gate);
  const Var skip = ad::reshape(skip_features(ad::slice_cols(features, 1, 4)), 1,
                               static_cast<Index>(dims_.p_max) * dims_.skip_features);
  return ad::concat_cols({gated, skip});
}

Var BoxVae::encoder_hidden(const Var& features, const Matrix& adjacency, int category_id) const {
  return ad::relu(encoder_hidden_(encoder_features(features, adjacency, category_id)));
}

GaussianVars BoxVae::encode(const Var& features, const Matrix& adjacency, int category_id) const {
  const Var hidden = encoder_hidden(features, adjacency, category_id);
  return {mu_head_(hidden), log_var_head_(hidden)};
}

GaussianVars BoxVae::encode(const PartGraph& g) const {
  return encode(ad::constant(g.features), g.adjacency, g.category_id);
}

BoxDecodeVars BoxVae::decode(const Var& z, const Conditioning& cond) const {
  require(z.rows() == 1 && z.cols() == dims_.latent, "decode expects a 1 x latent z");
  require(static_cast<int>(cond.presence.size()) == dims_.p_max, "presence must have p_max entries");
  const Index p = dims_.p_max;
  const Var gated = ad::mul(z, latent_gate_(ad::constant(cond.row(dims_.num_categories))));
  const Var h = ad::relu(decoder2_(ad::relu(decoder1_(gated))));
  BoxDecodeVars out;
  out.presence_probs = ad::sigmoid(presence_head_(h));
  out.boxes = ad::reshape(ad::tanh(box_head_(h)), p, 4);
  const Var logits = ad::reshape(adjacency_head_(h), p, p);
  out.adjacency_probs = ad::sigmoid(ad::scale(ad::add(logits, ad::transpose(logits)), 0.5));
  return out;
}

GaussianParams BoxVae::encode_params(const PartGraph& g) const {
  ad::NoGradGuard guard;
  return encode(g).values();
}

BoxDecodeOutput BoxVae::decode_output(const Matrix& z, const Conditioning& cond) const {
  ad::NoGradGuard guard;
  const BoxDecodeVars v = decode(ad::constant(z), cond);
  return {v.presence_probs.value(), v.boxes.value(), v.adjacency_probs.value()};
}

// --- losses -------------------------------------------------------------------

namespace {

Matrix presence_row(const std::vector<std::uint8_t>& presence) {
  Matrix m(1, static_cast<Index>(presence.size()));
  for (std::size_t k = 0; k < presence.size(); ++k) m(0, static_cast<Index>(k)) = presence[k] ? 1 : 0;
  return m;
}

Var bernoulli_nll_sum(const Var& probs, const Matrix& target) {
  const Var d = ad::clamp(probs, kProbEpsilon, 1.0 - kProbEpsilon);
  const Matrix ones = Matrix::Ones(target.rows(), target.cols());
  const Var ll = ad::mul(ad::log(d), ad::constant(target)) +
                 ad::mul(ad::log(ad::add_scalar(ad::scale(d, -1.0), 1.0)), ad::constant(ones - target));
  return ad::scale(ad::sum(ll), -1.0);
}

std::vector<Index> present_rows(const std::vector<std::uint8_t>& presence) {
  std::vector<Index> rows;
  for (std::size_t k = 0; k < presence.size(); ++k) {
    if (presence[k]) rows.push_back(static_cast<Index>(k));
  }
  return rows;
}

Var col(const Var& m, Index c) { return ad::slice_cols(m, c, 1); }

Matrix box_matrix(const Box& b) {
  Matrix m(1, 4);
  m << b.x_min, b.y_min, b.x_max, b.y_max;
  return m;
}

}  // namespace

Var presence_nll(const Var& probs, const std::vector<std::uint8_t>& presence) {
  require(probs.rows() == 1 && probs.cols() == static_cast<Index>(presence.size()),
          "presence_nll: probs must be 1 x p");
  return ad::scale(bernoulli_nll_sum(probs, presence_row(presence)),
                   1.0 / static_cast<double>(presence.size()));
}

Var box_terms(const Var& boxes_hat, const Matrix& boxes, const std::vector<std::uint8_t>& presence) {
  require(boxes_hat.rows() == boxes.rows() && boxes_hat.cols() == 4 && boxes.cols() == 4,
          "box_terms: boxes must be p x 4");
  const double p = static_cast<double>(boxes.rows());
  const auto rows = present_rows(presence);
  if (rows.empty()) return ad::constant(Matrix::Zero(1, 1));
  const Var pred = ad::gather_rows(boxes_hat, rows);
  Matrix truth(static_cast<Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) truth.row(static_cast<Index>(i)) = boxes.row(rows[i]);

  const Var mse = ad::sum(ad::square(ad::sub(pred, ad::constant(truth))));

  const Var tx0 = ad::constant(truth.col(0)), ty0 = ad::constant(truth.col(1));
  const Var tx1 = ad::constant(truth.col(2)), ty1 = ad::constant(truth.col(3));
  const Var px0 = col(pred, 0), py0 = col(pred, 1), px1 = col(pred, 2), py1 = col(pred, 3);
  const Var inter_w = ad::relu(ad::sub(ad::minimum(px1, tx1), ad::maximum(px0, tx0)));
  const Var inter_h = ad::relu(ad::sub(ad::minimum(py1, ty1), ad::maximum(py0, ty0)));
  const Var inter = ad::mul(inter_w, inter_h);
  const Var pred_area = ad::mul(ad::relu(ad::sub(px1, px0)), ad::relu(ad::sub(py1, py0)));
  const Matrix truth_area =
      ((truth.col(2) - truth.col(0)).array() * (truth.col(3) - truth.col(1)).array()).matrix();
  const Var uni = ad::sub(ad::add(pred_area, ad::constant(truth_area)), inter);
  const Var iou = ad::div(inter, uni);
  const Var floored = ad::maximum(iou, ad::constant(Matrix::Constant(iou.rows(), 1, kIouEpsilon)));
  const Var iou_loss = ad::scale(ad::sum(ad::log(floored)), -1.0);
  return ad::scale(ad::add(mse, iou_loss), 1.0 / p);
}

Var pairwise_center_loss(const Var& boxes_hat, const Matrix& boxes,
                         const std::vector<std::uint8_t>& presence) {
  const Index p = boxes.rows();
  require(boxes_hat.rows() == p && static_cast<Index>(presence.size()) == p,
          "pairwise_center_loss: shape mismatch");
  Matrix pair_mask = Matrix::Zero(p, p);
  int pairs = 0;
  for (Index m = 0; m < p; ++m) {
    for (Index n = 0; n < p; ++n) {
      if (m != n && presence[static_cast<std::size_t>(m)] && presence[static_cast<std::size_t>(n)]) {
        pair_mask(m, n) = 1.0;
        ++pairs;
      }
    }
  }
  if (pairs == 0 || p < 2) return ad::constant(Matrix::Zero(1, 1));
  Matrix truth_d(p, p);
  for (Index m = 0; m < p; ++m) {
    for (Index n = 0; n < p; ++n) {
      const double dx = 0.5 * (boxes(m, 0) + boxes(m, 2)) - 0.5 * (boxes(n, 0) + boxes(n, 2));
      const double dy = 0.5 * (boxes(m, 1) + boxes(m, 3)) - 0.5 * (boxes(n, 1) + boxes(n, 3));
      truth_d(m, n) = std::sqrt(dx * dx + dy * dy);
    }
  }
  const Var cx = ad::scale(ad::add(col(boxes_hat, 0), col(boxes_hat, 2)), 0.5);
  const Var cy = ad::scale(ad::add(col(boxes_hat, 1), col(boxes_hat, 3)), 0.5);
  const Var d_hat = ad::sqrt(ad::add(ad::square(ad::pairwise_diff(cx)), ad::square(ad::pairwise_diff(cy))));
  const Var sq = ad::square(ad::sub(d_hat, ad::constant(truth_d)));
  return ad::scale(ad::sum(ad::mul(sq, ad::constant(pair_mask))),
                   1.0 / static_cast<double>(p * (p - 1)));
}

Var adjacency_bce(const Var& probs, const Matrix& target) {
  require(probs.rows() == target.rows() && probs.cols() == target.cols(),
          "adjacency_bce: shape mismatch");
  return ad::scale(bernoulli_nll_sum(probs, target), 1.0 / static_cast<double>(target.size()));
}

ReconTerms recon_loss(const BoxDecodeVars& out, const PartGraph& target) {
  const Matrix boxes = target.features.rightCols(4);
  ReconTerms t;
  t.presence = presence_nll(out.presence_probs, target.presence);
  t.boxes = box_terms(out.boxes, boxes, target.presence);
  t.pairwise = pairwise_center_loss(out.boxes, boxes, target.presence);
  t.adjacency = adjacency_bce(out.adjacency_probs, target.adjacency);
  t.total = t.presence + t.boxes + t.pairwise + t.adjacency;
  return t;
}

double presence_nll(const Matrix& probs, const std::vector<std::uint8_t>& presence) {
  ad::NoGradGuard guard;
  return presence_nll(ad::constant(probs), presence).item();
}

double box_iou_loss(const Box& predicted, const Box& truth) {
  ad::NoGradGuard guard;
  // Reuse the batched form with p = 1 so both paths share one definition.
  const Var pred = ad::constant(box_matrix(predicted));
  const Matrix t = box_matrix(truth);
  const Var total = box_terms(pred, t, {1});
  return total.item() - box_mse(predicted, truth);
}

double box_mse(const Box& predicted, const Box& truth) {
  return (box_matrix(predicted) - box_matrix(truth)).squaredNorm();
}

double pairwise_center_loss(const Matrix& boxes_hat, const Matrix& boxes,
                            const std::vector<std::uint8_t>& presence) {
  ad::NoGradGuard guard;
  return pairwise_center_loss(ad::constant(boxes_hat), boxes, presence).item();
}

double adjacency_bce(const Matrix& probs, const Matrix& target) {
  ad::NoGradGuard guard;
  return adjacency_bce(ad::constant(probs), target).item();
}

ReconBreakdown boxvae_recon_loss(const BoxDecodeOutput& out, const PartGraph& target) {
  ad::NoGradGuard guard;
  const ReconTerms t = recon_loss(
      {ad::constant(out.presence_probs), ad::constant(out.boxes), ad::constant(out.adjacency_probs)},
      target);
  return {t.presence.item(), t.boxes.item(), t.pairwise.item(), t.adjacency.item(), t.total.item()};
}

double box_iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double area_a = std::max(0.0, a.width()) * std::max(0.0, a.height());
  const double area_b = std::max(0.0, b.width()) * std::max(0.0, b.height());
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace opal::boxvae
