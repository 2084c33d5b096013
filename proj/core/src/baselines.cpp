// SPDX-License-Identifier: Apache-2.0
#include "opal/baselines.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "opal/checkpoint.hpp"
#include "opal/error.hpp"

namespace opal::baselines {

using json = nlohmann::json;
using Index = Eigen::Index;

namespace {

std::vector<Index> present_rows(const std::vector<std::uint8_t>& presence) {
  std::vector<Index> rows;
  for (std::size_t k = 0; k < presence.size(); ++k) {
    if (presence[k]) rows.push_back(static_cast<Index>(k));
  }
  return rows;
}

Var probability_of(const Var& logit) {
  return ad::clamp(ad::sigmoid(logit), boxvae::kProbEpsilon, 1.0 - boxvae::kProbEpsilon);
}

Var one_minus(const Var& a) { return ad::add_scalar(ad::scale(a, -1.0), 1.0); }

}  // namespace

// --- BM-VAE ---------------------------------------------------------------------

BmVae::BmVae(const boxvae::BoxVaeDims& box_dims, const labelmap::LabelMapDims& mask_dims,
             std::uint64_t seed)
    : boxes_(box_dims, derive_seed(seed, 1)), masks_(mask_dims, derive_seed(seed, 2)) {
  require(box_dims.p_max == mask_dims.p_max && box_dims.num_categories == mask_dims.num_categories,
          "BmVae: box and mask dims disagree on p_max or categories");
  require(box_dims.latent == mask_dims.latent, "BmVae: latent sizes differ");
  Rng rng(derive_seed(seed, 3));
  const int fused = box_dims.encoder_hidden + 2 * mask_dims.sequence_hidden;
  params_.adopt("box.", boxes_.parameters());
  params_.adopt("mask.", masks_.parameters());
  mu_head_ = nn::Linear(params_, "fusion.mu", fused, box_dims.latent, rng);
  log_var_head_ = nn::Linear(params_, "fusion.log_var", fused, box_dims.latent, rng);
}

json BmVae::describe() const {
  return {{"box_dims", boxes_.dims().to_json()}, {"mask_dims", masks_.dims().to_json()}};
}

GaussianVars BmVae::encode(const dataset::PartGraph& g, const labelmap::PartMaskSet& masks) const {
  const Var hb = boxes_.encoder_hidden(ad::constant(g.features), g.adjacency, g.category_id);
  const labelmap::EncoderState state =
      masks_.encoder_state(ad::constant(masks.masks), labelmap::BoxCondition::of(g));
  const Var h = ad::concat_cols({hb, masks_.gated_features(state, g.category_id)});
  return {mu_head_(h), log_var_head_(h)};
}

BmVaeOutput BmVae::forward(const dataset::PartGraph& g, const labelmap::PartMaskSet& masks,
                           const Matrix& eps) const {
  BmVaeOutput out;
  out.posterior = encode(g, masks);
  const Var z = reparameterize(out.posterior, eps);
  out.boxes = boxes_.decode(z, boxvae::Conditioning::of(g));
  out.mask_logits = masks_.decode(z, labelmap::BoxCondition::of(g));
  return out;
}

BmVaeLoss bmvae_loss(const BmVaeOutput& out, const dataset::PartGraph& g,
                     const labelmap::PartMaskSet& masks, double lambda) {
  BmVaeLoss l;
  l.box_recon = boxvae::recon_loss(out.boxes, g).total;
  l.mask_recon = labelmap::mask_recon_loss(out.mask_logits, masks);
  l.kl = training::kl_gaussian(out.posterior);
  l.total = training::elbo_loss(ad::add(l.box_recon, l.mask_recon), l.kl, lambda);
  return l;
}

BmVaeObjective::BmVaeObjective(BmVae& model, std::vector<dataset::PartGraph> graphs,
                               std::vector<labelmap::PartMaskSet> masks)
    : model_(model), graphs_(std::move(graphs)), masks_(std::move(masks)) {
  require(graphs_.size() == masks_.size(), "BmVaeObjective: graphs and masks differ in length");
}

training::SampleLoss BmVaeObjective::sample_loss(std::size_t index, Rng& rng, double lambda) {
  const auto& g = graphs_.at(index);
  const auto& m = masks_.at(index);
  const BmVaeOutput out = model_.forward(g, m, standard_normal(1, model_.box_model().dims().latent, rng));
  const BmVaeLoss l = bmvae_loss(out, g, m, lambda);
  return {l.total, l.box_recon.item() + l.mask_recon.item(), l.kl.item()};
}

// --- BS-LSTM --------------------------------------------------------------------

GmmBoxParams gmm_params(const Matrix& head_row, int components) {
  const int k_count = components;
  require(head_row.rows() == 1 && head_row.cols() == gmm_head_size(k_count),
          "gmm_params: head row has the wrong width");
  GmmBoxParams p;
  p.weights.resize(k_count);
  p.means.resize(k_count, 4);
  p.log_scales.resize(k_count, 4);
  const double top = head_row.leftCols(k_count).maxCoeff();
  double total = 0.0;
  for (int k = 0; k < k_count; ++k) {
    p.weights(k) = std::exp(head_row(0, k) - top);
    total += p.weights(k);
    for (int j = 0; j < 4; ++j) {
      p.means(k, j) = head_row(0, k_count + 4 * k + j);
      p.log_scales(k, j) = std::clamp(head_row(0, 5 * k_count + 4 * k + j), kLogScaleMin, kLogScaleMax);
    }
  }
  p.weights /= total;
  return p;
}

Var gmm_nll(const Var& head_rows, const Matrix& boxes, int components) {
  const Index n = head_rows.rows();
  const Index k_count = components;
  require(head_rows.cols() == gmm_head_size(components), "gmm_nll: head rows have the wrong width");
  require(boxes.rows() == n && boxes.cols() == 4, "gmm_nll: boxes must be n x 4");

  const Var log_w = ad::log_softmax_channels(ad::slice_cols(head_rows, 0, k_count), k_count);
  const Var means = ad::slice_cols(head_rows, k_count, 4 * k_count);
  const Var log_scales = ad::clamp(ad::slice_cols(head_rows, 5 * k_count, 4 * k_count), kLogScaleMin,
                                   kLogScaleMax);
  const Var targets = ad::constant(boxes.replicate(1, k_count));
  const Var standardized = ad::mul(ad::sub(targets, means), ad::exp(ad::scale(log_scales, -1.0)));
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const Var per_coord =
      ad::add_scalar(ad::sub(ad::scale(ad::square(standardized), -0.5), log_scales), -half_log_2pi);

  // column block k of 4 coordinates sums into mixture column k
  Matrix group = Matrix::Zero(4 * k_count, k_count);
  for (Index k = 0; k < k_count; ++k) group.block(4 * k, k, 4, 1).setOnes();
  const Var joint = ad::add(log_w, ad::matmul(per_coord, ad::constant(group)));

  const Matrix shift = joint.value().rowwise().maxCoeff().replicate(1, k_count);
  const Var lse = ad::add(ad::log(ad::sum_cols(ad::exp(ad::sub(joint, ad::constant(shift))))),
                          ad::constant(shift.col(0)));
  return ad::scale(ad::sum(lse), -1.0);
}

dataset::Box sample_box_from_gmm(const GmmBoxParams& params, std::uint64_t seed) {
  require(params.components() > 0, "sample_box_from_gmm: empty mixture");
  Rng rng(seed);
  const double u = open_uniform(rng);
  int k = params.components() - 1;
  double cumulative = 0.0;
  for (int i = 0; i < params.components(); ++i) {
    cumulative += params.weights(i);
    if (u < cumulative) {
      k = i;
      break;
    }
  }
  const Matrix eps = standard_normal(1, 4, rng);
  double c[4];
  for (int j = 0; j < 4; ++j) {
    c[j] = std::clamp(params.means(k, j) + std::exp(params.log_scales(k, j)) * eps(0, j), -1.0, 1.0);
  }
  return {c[0], c[1], c[2], c[3]};
}

json BsLstmDims::to_json() const {
  return {{"p_max", p_max},   {"num_categories", num_categories}, {"components", components},
          {"hidden", hidden}, {"shape_channels", shape_channels}, {"mask_size", mask_size}};
}

BsLstm::BsLstm(const BsLstmDims& dims, std::uint64_t seed) : dims_(dims) {
  require(dims.p_max > 0 && dims.num_categories > 0, "BsLstm needs p_max and categories");
  require(dims.mask_size % 8 == 0 && dims.shape_channels % 4 == 0, "BsLstm: bad shape geometry");
  Rng rng(seed);
  const int p = dims.p_max;
  const int m = dims.num_categories;
  const int c = dims.shape_channels;
  const int b = dims.mask_size / 8;
  box_lstm_ = nn::BiLstm(params_, "box.lstm", m + 2 * p, dims.hidden, rng);
  box_head_ = nn::Linear(params_, "box.mixture", 2 * dims.hidden, gmm_head_size(dims.components), rng);
  shape_lstm_ = nn::BiLstm(params_, "shape.lstm", 5 + m + p, dims.hidden, rng);
  shape_lift_ = nn::Linear(params_, "shape.lift", 2 * dims.hidden, c * b * b, rng);
  shape_deconv1_ = nn::ConvTranspose2d(params_, "shape.deconv1", c, c / 2, b, b, 4, 2, 1, rng);
  shape_deconv2_ = nn::ConvTranspose2d(params_, "shape.deconv2", c / 2, c / 4, 2 * b, 2 * b, 4, 2, 1, rng);
  shape_deconv3_ = nn::ConvTranspose2d(params_, "shape.deconv3", c / 4, 2, 4 * b, 4 * b, 4, 2, 1, rng);
}

Var BsLstm::box_heads(int category_id, const std::vector<std::uint8_t>& presence) const {
  const int p = dims_.p_max;
  const int m = dims_.num_categories;
  require(static_cast<int>(presence.size()) == p, "box_heads: presence must have p entries");
  Matrix input = Matrix::Zero(p, m + 2 * p);
  for (int k = 0; k < p; ++k) {
    input(k, category_id - 1) = 1.0;
    for (int j = 0; j < p; ++j) input(k, m + j) = presence[static_cast<std::size_t>(j)];
    input(k, m + p + k) = 1.0;
  }
  return box_head_(box_lstm_(ad::constant(input)));
}

std::vector<GmmBoxParams> BsLstm::box_step(int category_id,
                                           const std::vector<std::uint8_t>& presence) const {
  ad::NoGradGuard guard;
  const Matrix heads = box_heads(category_id, presence).value();
  std::vector<GmmBoxParams> out;
  for (Index k = 0; k < heads.rows(); ++k) out.push_back(gmm_params(heads.row(k), dims_.components));
  return out;
}

Var BsLstm::box_loss(const dataset::PartGraph& g) const {
  const auto rows = present_rows(g.presence);
  if (rows.empty()) return ad::constant(Matrix::Zero(1, 1));
  Matrix targets(static_cast<Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) targets.row(static_cast<Index>(i)) = g.features.block(rows[i], 1, 1, 4);
  const Var heads = ad::gather_rows(box_heads(g.category_id, g.presence), rows);
  return ad::scale(gmm_nll(heads, targets, dims_.components), 1.0 / static_cast<double>(rows.size()));
}

Var BsLstm::shape_step(const Matrix& boxes, int category_id,
                       const std::vector<std::uint8_t>& presence) const {
  const int p = dims_.p_max;
  const int m = dims_.num_categories;
  const Index pixels = static_cast<Index>(dims_.mask_size) * dims_.mask_size;
  require(boxes.rows() == p && boxes.cols() == 4, "shape_step: boxes must be p x 4");
  require(static_cast<int>(presence.size()) == p, "shape_step: presence must have p entries");
  Matrix input = Matrix::Zero(p, 5 + m + p);
  for (int k = 0; k < p; ++k) {
    const bool on = presence[static_cast<std::size_t>(k)] != 0;
    input(k, 0) = on ? 1.0 : 0.0;
    if (on) input.block(k, 1, 1, 4) = boxes.row(k);
    input(k, 5 + category_id - 1) = 1.0;
    input(k, 5 + m + k) = 1.0;
  }
  const auto rows = present_rows(presence);
  if (rows.empty()) return ad::constant(Matrix::Zero(p, 2 * pixels));
  Var h = ad::gather_rows(shape_lstm_(ad::constant(input)), rows);
  h = ad::relu(shape_lift_(h));
  h = ad::relu(shape_deconv1_(h));
  h = ad::relu(shape_deconv2_(h));
  return ad::scatter_rows(shape_deconv3_(h), rows, p);
}

Var BsLstm::shape_loss(const dataset::PartGraph& g, const labelmap::PartMaskSet& masks) const {
  return labelmap::mask_recon_loss(shape_step(g.features.rightCols(4), g.category_id, g.presence), masks);
}

BsLstmSample BsLstm::generate(int category_id, const std::vector<std::uint8_t>& presence,
                              std::uint64_t seed) const {
  const auto mixtures = box_step(category_id, presence);
  BsLstmSample out;
  Matrix boxes = Matrix::Zero(dims_.p_max, 4);
  for (int k = 0; k < dims_.p_max; ++k) {
    if (!presence[static_cast<std::size_t>(k)]) continue;
    const dataset::Box raw = sample_box_from_gmm(mixtures[static_cast<std::size_t>(k)],
                                                 derive_seed(seed, static_cast<std::uint64_t>(k)));
    const dataset::Box b = training::canonical_box(raw.x_min, raw.y_min, raw.x_max, raw.y_max);
    out.boxes[k] = b;
    boxes.row(k) << b.x_min, b.y_min, b.x_max, b.y_max;
  }
  ad::NoGradGuard guard;
  Matrix probs = labelmap::foreground_probabilities(shape_step(boxes, category_id, presence).value());
  for (int k = 0; k < dims_.p_max; ++k) {
    if (!presence[static_cast<std::size_t>(k)]) probs.row(k).setZero();
  }
  out.masks = {std::move(probs), presence};
  return out;
}

BsLstmObjective::BsLstmObjective(BsLstm& model, std::vector<dataset::PartGraph> graphs,
                                 std::vector<labelmap::PartMaskSet> masks)
    : model_(model), graphs_(std::move(graphs)), masks_(std::move(masks)) {
  require(graphs_.size() == masks_.size(), "BsLstmObjective: graphs and masks differ in length");
}

training::SampleLoss BsLstmObjective::sample_loss(std::size_t index, Rng&, double) {
  const auto& g = graphs_.at(index);
  const Var loss = ad::add(model_.box_loss(g), model_.shape_loss(g, masks_.at(index)));
  return {loss, loss.item(), 0.0};
}

// --- Gumbel-softmax ---------------------------------------------------------------

double GumbelConfig::at(int epoch) const {
  return std::max(tau_min, tau * std::exp(-decay * static_cast<double>(epoch)));
}

json GumbelConfig::to_json() const { return {{"tau", tau}, {"decay", decay}, {"tau_min", tau_min}}; }

Eigen::VectorXd gumbel_softmax(const Eigen::VectorXd& h, const Eigen::VectorXd& g, double tau) {
  require(h.size() == g.size() && h.size() > 0, "gumbel_softmax: size mismatch");
  require(tau > 0.0, "gumbel_softmax: tau must be positive");
  const Eigen::VectorXd y = (h + g) / tau;
  const Eigen::VectorXd e = (y.array() - y.maxCoeff()).exp();
  return e / e.sum();
}

Var gumbel_softmax(const Var& logits, const Matrix& noise, double tau, Index channels) {
  require(tau > 0.0, "gumbel_softmax: tau must be positive");
  require(noise.rows() == logits.rows() && noise.cols() == logits.cols(), "gumbel_softmax: noise shape");
  return ad::softmax_channels(ad::scale(ad::add(logits, ad::constant(noise)), 1.0 / tau), channels);
}

Matrix gumbel_noise(Index rows, Index cols, Rng& rng) {
  Matrix g(rows, cols);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = standard_gumbel(rng);
  return g;
}

// --- CG-GAN ---------------------------------------------------------------------

json CgGanDims::to_json() const {
  return {{"p_max", p_max}, {"num_categories", num_categories}, {"noise", noise},
          {"canvas", canvas}, {"channels", channels}};
}

CgGan::CgGan(const CgGanDims& dims, std::uint64_t seed) : dims_(dims) {
  require(dims.p_max > 0 && dims.num_categories > 0, "CgGan needs p_max and categories");
  require(dims.canvas % 8 == 0 && dims.channels % 4 == 0, "CgGan: bad geometry");
  Rng rng(seed);
  const int c = dims.channels;
  const int b = dims.canvas / 8;
  const int cond = dims.num_categories + dims.p_max;
  g_lift_ = nn::Linear(generator_, "generator.lift", dims.noise + cond, c * b * b, rng);
  g_deconv1_ = nn::ConvTranspose2d(generator_, "generator.deconv1", c, c / 2, b, b, 4, 2, 1, rng);
  g_deconv2_ = nn::ConvTranspose2d(generator_, "generator.deconv2", c / 2, c / 4, 2 * b, 2 * b, 4, 2, 1, rng);
  g_deconv3_ = nn::ConvTranspose2d(generator_, "generator.deconv3", c / 4, dims.classes(), 4 * b, 4 * b, 4,
                                   2, 1, rng);
  d_conv1_ = nn::Conv2d(discriminator_, "discriminator.conv1", dims.classes(), c / 4, 8 * b, 8 * b, 4, 2, 1,
                        rng);
  d_conv2_ = nn::Conv2d(discriminator_, "discriminator.conv2", c / 4, c / 2, 4 * b, 4 * b, 4, 2, 1, rng);
  d_conv3_ = nn::Conv2d(discriminator_, "discriminator.conv3", c / 2, c, 2 * b, 2 * b, 4, 2, 1, rng);
  d_head_ = nn::Linear(discriminator_, "discriminator.head", c * b * b + cond, 1, rng);
}

nn::ParameterSet CgGan::all_parameters() {
  nn::ParameterSet all;
  all.adopt("", generator_);
  all.adopt("", discriminator_);
  return all;
}

Matrix CgGan::condition_row(int category_id, const std::vector<std::uint8_t>& presence) const {
  return boxvae::Conditioning{category_id, presence}.row(dims_.num_categories);
}

Var CgGan::generator_logits(const Var& z, const Matrix& condition) const {
  require(z.rows() == 1 && z.cols() == dims_.noise, "generator_logits: z must be 1 x noise");
  Var h = ad::relu(g_lift_(ad::concat_cols({z, ad::constant(condition)})));
  h = ad::relu(g_deconv1_(h));
  h = ad::relu(g_deconv2_(h));
  return g_deconv3_(h);
}

Var CgGan::generate(const Var& z, const Matrix& condition, const Matrix& noise, double tau) const {
  return gumbel_softmax(generator_logits(z, condition), noise, tau, dims_.classes());
}

Var CgGan::discriminate(const Var& maps, const Matrix& condition) const {
  require(maps.rows() == 1 && maps.cols() == static_cast<Index>(dims_.classes()) * dims_.pixels(),
          "discriminate: maps must be 1 x classes * pixels");
  Var h = ad::relu(d_conv1_(maps));
  h = ad::relu(d_conv2_(h));
  h = ad::relu(d_conv3_(h));
  return d_head_(ad::concat_cols({h, ad::constant(condition)}));
}

Raster CgGan::sample_label_map(int category_id, const std::vector<std::uint8_t>& presence,
                               std::uint64_t seed, double tau) const {
  ad::NoGradGuard guard;
  Rng rng(seed);
  const Matrix z = standard_normal(1, dims_.noise, rng);
  const Matrix g = gumbel_noise(1, static_cast<Index>(dims_.classes()) * dims_.pixels(), rng);
  const Matrix y = generate(ad::constant(z), condition_row(category_id, presence), g, tau).value();
  Raster out(dims_.canvas, dims_.canvas);
  for (int i = 0; i < dims_.pixels(); ++i) {
    int best = 0;
    for (int c = 1; c < dims_.classes(); ++c) {
      if (y(0, static_cast<Index>(c) * dims_.pixels() + i) > y(0, static_cast<Index>(best) * dims_.pixels() + i)) {
        best = c;
      }
    }
    out.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Var discriminator_loss(const Var& real_logit, const Var& fake_logit) {
  const Var real = ad::log(probability_of(real_logit));
  const Var fake = ad::log(one_minus(probability_of(fake_logit)));
  return ad::scale(ad::sum(ad::add(real, fake)), -0.5);
}

Var generator_loss(const Var& fake_logit) {
  return ad::scale(ad::sum(ad::log(probability_of(fake_logit))), -1.0);
}

Matrix real_label_map(const dataset::NormalizedInstance& inst, const dataset::PartSchema& schema,
                      int p_max, int canvas) {
  const labelmap::ObjectLayout layout =
      labelmap::compose_layout(labelmap::mask_set(inst, p_max), inst.part_boxes,
                               schema.effective_paste_order(), inst.category_id, canvas, canvas);
  const Index pixels = static_cast<Index>(canvas) * canvas;
  Matrix m = Matrix::Zero(1, (p_max + 1) * pixels);
  for (Index i = 0; i < pixels; ++i) {
    m(0, layout.label_map.pixels[static_cast<std::size_t>(i)] * pixels + i) = 1.0;
  }
  return m;
}

json GanEpochMetrics::to_json() const {
  return {{"epoch", epoch}, {"d_loss", d_loss}, {"g_loss", g_loss}, {"tau", tau}};
}

GanStepLosses cggan_train_step(CgGan& model, optim::Adagrad& d_opt, optim::Adagrad& g_opt,
                               const std::vector<GanSample>& batch, Rng& rng, double tau) {
  require(!batch.empty(), "cggan_train_step: empty batch");
  const CgGanDims& dims = model.dims();
  const Index width = static_cast<Index>(dims.classes()) * dims.pixels();
  const double inv = 1.0 / static_cast<double>(batch.size());
  GanStepLosses out;

  d_opt.zero_grad();
  for (const GanSample& s : batch) {
    Matrix fake;
    {
      ad::NoGradGuard guard;
      const Matrix z = standard_normal(1, dims.noise, rng);
      fake = model.generate(ad::constant(z), s.condition, gumbel_noise(1, width, rng), tau).value();
    }
    const Var loss = discriminator_loss(model.discriminate(ad::constant(s.real), s.condition),
                                        model.discriminate(ad::constant(fake), s.condition));
    out.d_loss += loss.item() * inv;
    ad::backward(ad::scale(loss, inv));
  }
  d_opt.step();

  g_opt.zero_grad();
  for (const GanSample& s : batch) {
    const Matrix z = standard_normal(1, dims.noise, rng);
    const Var fake = model.generate(ad::constant(z), s.condition, gumbel_noise(1, width, rng), tau);
    const Var loss = generator_loss(model.discriminate(fake, s.condition));
    out.g_loss += loss.item() * inv;
    ad::backward(ad::scale(loss, inv));
  }
  g_opt.step();
  return out;
}

GanTrainResult train_cggan(CgGan& model, const std::vector<GanSample>& samples,
                           const std::vector<std::size_t>& train, const training::TrainConfig& config,
                           const GumbelConfig& gumbel, const json& extra_sidecar) {
  require(config.epochs >= 1 && config.batch_size >= 1, "train_cggan: bad config");
  for (std::size_t i : train) require(i < samples.size(), "train index out of range");
  if (train.empty()) throw ValidationError("train_cggan: no training samples");
  std::filesystem::create_directories(config.output_dir);

  GanTrainResult result;
  result.metrics_log = config.output_dir / "cggan.metrics.jsonl";
  result.checkpoint = config.output_dir / "cggan_last.bin";
  std::ofstream log(result.metrics_log, std::ios::trunc);
  if (!log) throw Error("cannot write " + result.metrics_log.string());

  const optim::AdagradOptions options{.learning_rate = config.learning_rate, .clip_norm = config.clip_norm};
  optim::Adagrad d_opt(model.discriminator_parameters(), options);
  optim::Adagrad g_opt(model.generator_parameters(), options);
  Rng noise(derive_seed(config.seed, 0x7a11));
  std::vector<std::size_t> order = train;

  json sidecar = extra_sidecar.is_object() ? extra_sidecar : json::object();
  sidecar["kind"] = "cggan";
  sidecar["model"] = {{"dims", model.dims().to_json()}};
  sidecar["train_config"] = config.to_json();
  sidecar["gumbel"] = gumbel.to_json();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle(derive_seed(config.seed, 0x5000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle);
    const double tau = gumbel.at(epoch);
    GanEpochMetrics m;
    m.epoch = epoch;
    m.tau = tau;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<GanSample> batch;
      std::vector<std::size_t> ids(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
      for (std::size_t i : ids) batch.push_back(samples[i]);
      const GanStepLosses s = cggan_train_step(model, d_opt, g_opt, batch, noise, tau);
      if (!std::isfinite(s.d_loss) || !std::isfinite(s.g_loss)) {
        const json dump = {{"kind", "cggan"}, {"epoch", epoch}, {"batch", ids},
                           {"d_loss", s.d_loss}, {"g_loss", s.g_loss}};
        const auto path = config.output_dir / "cggan.divergence.json";
        std::ofstream(path) << dump.dump(2) << '\n';
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + "; dump written to " +
                              path.string());
      }
      m.d_loss += s.d_loss;
      m.g_loss += s.g_loss;
      ++steps;
    }
    m.d_loss /= static_cast<double>(steps);
    m.g_loss /= static_cast<double>(steps);
    log << m.to_json().dump() << '\n';
    log.flush();
    spdlog::debug("cggan epoch {} d {:.5f} g {:.5f} tau {:.3f}", epoch, m.d_loss, m.g_loss, tau);
    result.metrics.push_back(m);
  }
  sidecar["epoch"] = config.epochs - 1;
  checkpoint::save(result.checkpoint, model.all_parameters(), sidecar);
  return result;
}

}  // namespace opal::baselines
