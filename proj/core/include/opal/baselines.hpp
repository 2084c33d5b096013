// SPDX-License-Identifier: Apache-2.0
//
// Comparison models: a joint box-and-mask VAE, a recurrent box/shape
// generator with Gaussian-mixture box heads, and a conditional GAN whose
// generator samples label maps through the Gumbel-softmax relaxation.
#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "opal/boxvae.hpp"
#include "opal/labelmap.hpp"
#include "opal/training.hpp"

namespace opal::baselines {

using ad::Matrix;
using ad::Var;

// --- BM-VAE ---------------------------------------------------------------------

struct BmVaeOutput {
  GaussianVars posterior;
  boxvae::BoxDecodeVars boxes;
  Var mask_logits;
};

struct BmVaeLoss {
  Var total;
  Var box_recon;
  Var mask_recon;
  Var kl;
};

/// Encodes boxes and masks with the BoxVae and LabelMapVae encoders, fuses
/// both hidden representations into one latent and decodes boxes and masks
/// from the same z. Mask decoding is conditioned on the ground-truth boxes.
class BmVae {
 public:
  BmVae(const boxvae::BoxVaeDims& box_dims, const labelmap::LabelMapDims& mask_dims,
        std::uint64_t seed);

  nn::ParameterSet& parameters() { return params_; }
  const boxvae::BoxVae& box_model() const { return boxes_; }
  const labelmap::LabelMapVae& mask_model() const { return masks_; }
  nlohmann::json describe() const;

  GaussianVars encode(const dataset::PartGraph& g, const labelmap::PartMaskSet& masks) const;
  BmVaeOutput forward(const dataset::PartGraph& g, const labelmap::PartMaskSet& masks,
                      const Matrix& eps) const;

 private:
  boxvae::BoxVae boxes_;
  labelmap::LabelMapVae masks_;
  nn::ParameterSet fusion_;
  nn::ParameterSet params_;
  nn::Linear mu_head_;
  nn::Linear log_var_head_;
};

/// box recon + mask recon + lambda * KL.
BmVaeLoss bmvae_loss(const BmVaeOutput& out, const dataset::PartGraph& g,
                     const labelmap::PartMaskSet& masks, double lambda);

class BmVaeObjective : public training::Objective {
 public:
  BmVaeObjective(BmVae& model, std::vector<dataset::PartGraph> graphs,
                 std::vector<labelmap::PartMaskSet> masks);
  std::string kind() const override { return "bmvae"; }
  nn::ParameterSet& parameters() override { return model_.parameters(); }
  std::size_t sample_count() const override { return graphs_.size(); }
  training::SampleLoss sample_loss(std::size_t index, Rng& rng, double lambda) override;
  nlohmann::json describe() const override { return model_.describe(); }

 private:
  BmVae& model_;
  std::vector<dataset::PartGraph> graphs_;
  std::vector<labelmap::PartMaskSet> masks_;
};

// --- BS-LSTM --------------------------------------------------------------------

inline constexpr int kMixtureComponents = 3;
inline constexpr double kLogScaleMin = -7.0;
inline constexpr double kLogScaleMax = 3.0;

/// Diagonal Gaussian mixture over the four box coordinates of one part.
struct GmmBoxParams {
  Eigen::VectorXd weights;  // K, on the simplex
  Matrix means;             // K x 4
  Matrix log_scales;        // K x 4

  int components() const { return static_cast<int>(weights.size()); }
};

/// Layout of one head row: K mixture logits, K x 4 means, K x 4 log-scales.
inline int gmm_head_size(int components) { return 9 * components; }

/// Softmaxed weights, raw means and log-scales clamped to
/// [kLogScaleMin, kLogScaleMax].
GmmBoxParams gmm_params(const Matrix& head_row, int components);

/// Sum over rows of -ln sum_k w_k prod_j N(box_j; mean_kj, exp(log_scale_kj)).
Var gmm_nll(const Var& head_rows, const Matrix& boxes, int components);

/// Picks a component by weight, draws a diagonal Gaussian sample and clamps
/// every coordinate to [-1, 1].
dataset::Box sample_box_from_gmm(const GmmBoxParams& params, std::uint64_t seed);

struct BsLstmDims {
  int p_max = 0;
  int num_categories = 0;
  int components = kMixtureComponents;
  int hidden = 32;
  int shape_channels = 16;
  int mask_size = labelmap::kMaskSize;

  nlohmann::json to_json() const;
};

struct BsLstmSample {
  std::map<int, dataset::Box> boxes;
  labelmap::PartMaskSet masks;
};

/// Box LSTM: a bidirectional LSTM over the canonical part sequence emits one
/// mixture per part. Shape LSTM: a second bidirectional LSTM reads the boxes
/// and decodes a mask per present part.
class BsLstm {
 public:
  BsLstm(const BsLstmDims& dims, std::uint64_t seed);

  const BsLstmDims& dims() const { return dims_; }
  nn::ParameterSet& parameters() { return params_; }

  /// p x gmm_head_size(K).
  Var box_heads(int category_id, const std::vector<std::uint8_t>& presence) const;
  std::vector<GmmBoxParams> box_step(int category_id, const std::vector<std::uint8_t>& presence) const;
  /// Mean mixture NLL over present parts.
  Var box_loss(const dataset::PartGraph& g) const;

  /// boxes: p x 4. Returns p x (2 * pixels) logits, absent rows zero.
  Var shape_step(const Matrix& boxes, int category_id, const std::vector<std::uint8_t>& presence) const;
  Var shape_loss(const dataset::PartGraph& g, const labelmap::PartMaskSet& masks) const;

  BsLstmSample generate(int category_id, const std::vector<std::uint8_t>& presence,
                        std::uint64_t seed) const;

 private:
  BsLstmDims dims_;
  nn::ParameterSet params_;
  nn::BiLstm box_lstm_;
  nn::Linear box_head_;
  nn::BiLstm shape_lstm_;
  nn::Linear shape_lift_;
  nn::ConvTranspose2d shape_deconv1_;
  nn::ConvTranspose2d shape_deconv2_;
  nn::ConvTranspose2d shape_deconv3_;
};

class BsLstmObjective : public training::Objective {
 public:
  BsLstmObjective(BsLstm& model, std::vector<dataset::PartGraph> graphs,
                  std::vector<labelmap::PartMaskSet> masks);
  std::string kind() const override { return "bslstm"; }
  nn::ParameterSet& parameters() override { return model_.parameters(); }
  std::size_t sample_count() const override { return graphs_.size(); }
  /// Box NLL plus mask cross-entropy; the KL slot is zero.
  training::SampleLoss sample_loss(std::size_t index, Rng& rng, double lambda) override;
  nlohmann::json describe() const override { return {{"dims", model_.dims().to_json()}}; }

 private:
  BsLstm& model_;
  std::vector<dataset::PartGraph> graphs_;
  std::vector<labelmap::PartMaskSet> masks_;
};

// --- Gumbel-softmax ---------------------------------------------------------------

struct GumbelConfig {
  double tau = 1.0;
  /// tau(epoch) = max(tau_min, tau * exp(-decay * epoch)); decay 0 keeps tau fixed.
  double decay = 0.0;
  double tau_min = 0.1;

  double at(int epoch) const;
  nlohmann::json to_json() const;
};

/// softmax((h + g) / tau).
Eigen::VectorXd gumbel_softmax(const Eigen::VectorXd& h, const Eigen::VectorXd& g, double tau);
/// Per-pixel form: logits and noise hold `channels` planes per row.
Var gumbel_softmax(const Var& logits, const Matrix& noise, double tau, Eigen::Index channels);
Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// --- CG-GAN ---------------------------------------------------------------------

struct CgGanDims {
  int p_max = 0;
  int num_categories = 0;
  int noise = 64;
  int canvas = 64;
  int channels = 32;  // widest feature map; halves per stage

  int classes() const { return p_max + 1; }
  int pixels() const { return canvas * canvas; }
  nlohmann::json to_json() const;
};

class CgGan {
 public:
  CgGan(const CgGanDims& dims, std::uint64_t seed);

  const CgGanDims& dims() const { return dims_; }
  nn::ParameterSet& generator_parameters() { return generator_; }
  nn::ParameterSet& discriminator_parameters() { return discriminator_; }
  /// Both players in one collection (names already carry their prefix).
  nn::ParameterSet all_parameters();

  Matrix condition_row(int category_id, const std::vector<std::uint8_t>& presence) const;
  /// 1 x (classes * pixels) per-pixel logits.
  Var generator_logits(const Var& z, const Matrix& condition) const;
  /// Per-pixel Gumbel-softmax sample from the generator.
  Var generate(const Var& z, const Matrix& condition, const Matrix& noise, double tau) const;
  /// 1 x 1 real/fake logit for a (soft or one-hot) label map.
  Var discriminate(const Var& maps, const Matrix& condition) const;

  /// Hard label map (argmax of the relaxed sample); deterministic in seed.
  Raster sample_label_map(int category_id, const std::vector<std::uint8_t>& presence,
                          std::uint64_t seed, double tau = 1.0) const;

 private:
  CgGanDims dims_;
  nn::ParameterSet generator_;
  nn::ParameterSet discriminator_;
  nn::Linear g_lift_;
  nn::ConvTranspose2d g_deconv1_;
  nn::ConvTranspose2d g_deconv2_;
  nn::ConvTranspose2d g_deconv3_;
  nn::Conv2d d_conv1_;
  nn::Conv2d d_conv2_;
  nn::Conv2d d_conv3_;
  nn::Linear d_head_;
};

/// Mean of the two binary cross-entropies; equals ln 2 when both outputs are 0.5.
Var discriminator_loss(const Var& real_logit, const Var& fake_logit);
/// Non-saturating generator loss -ln D(fake).
Var generator_loss(const Var& fake_logit);

/// One-hot (p + 1 planes) label map of a ground-truth instance on the GAN canvas.
Matrix real_label_map(const dataset::NormalizedInstance& inst, const dataset::PartSchema& schema,
                      int p_max, int canvas);

struct GanEpochMetrics {
  int epoch = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double tau = 1.0;

  nlohmann::json to_json() const;
};

struct GanStepLosses {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

struct GanSample {
  Matrix real;  // 1 x (classes * pixels)
  Matrix condition;
};

/// One discriminator update followed by one generator update on `batch`.
GanStepLosses cggan_train_step(CgGan& model, optim::Adagrad& d_opt, optim::Adagrad& g_opt,
                               const std::vector<GanSample>& batch, Rng& rng, double tau);

struct GanTrainResult {
  std::vector<GanEpochMetrics> metrics;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_log;
};

/// Adagrad on both players; writes `cggan.metrics.jsonl` and `cggan_last.bin`.
/// A non-finite loss writes `cggan.divergence.json` and throws DivergenceError.
GanTrainResult train_cggan(CgGan& model, const std::vector<GanSample>& samples,
                           const std::vector<std::size_t>& train, const training::TrainConfig& config,
                           const GumbelConfig& gumbel = {}, const nlohmann::json& extra_sidecar = {});

}  // namespace opal::baselines
