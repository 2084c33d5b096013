// SPDX-License-Identifier: Apache-2.0
#include "opal/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "opal/checkpoint.hpp"
#include "opal/error.hpp"

namespace opal::training {

using json = nlohmann::json;

Var kl_gaussian(const GaussianVars& g) {
  const Var lv = ad::clamp(g.log_var, kLogVarMin, kLogVarMax);
  const Var terms = ad::sub(ad::add(ad::exp(lv), ad::square(g.mu)), ad::add_scalar(lv, 1.0));
  return ad::scale(ad::sum(terms), 0.5);
}

double kl_gaussian(const GaussianParams& g) {
  require(g.mu.size() == g.log_var.size(), "kl_gaussian: shape mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < g.mu.size(); ++i) {
    const double lv = std::clamp(g.log_var(i), kLogVarMin, kLogVarMax);
    kl += std::exp(lv) + g.mu(i) * g.mu(i) - 1.0 - lv;
  }
  return 0.5 * kl;
}

Var elbo_loss(const Var& recon, const Var& kl, double lambda) {
  return ad::add(recon, ad::scale(kl, lambda));
}

double elbo_loss(double recon, double kl, double lambda) { return recon + lambda * kl; }

json AnnealConfig::to_json() const {
  return {{"lambda_max", lambda_max},
          {"cycles", cycles},
          {"ramp_fraction", ramp_fraction},
          {"gap_threshold", gap_threshold}};
}

AnnealConfig AnnealConfig::from_json(const json& j) {
  AnnealConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "lambda_max") c.lambda_max = value.get<double>();
    else if (key == "cycles") c.cycles = value.get<int>();
    else if (key == "ramp_fraction") c.ramp_fraction = value.get<double>();
    else if (key == "gap_threshold") c.gap_threshold = value.get<double>();
    else throw ConfigError("anneal: unknown key '" + key + "'");
  }
  if (c.lambda_max < 0 || c.cycles < 1 || c.ramp_fraction <= 0 || c.ramp_fraction > 1) {
    throw ConfigError("anneal: need lambda_max >= 0, cycles >= 1, ramp_fraction in (0, 1]");
  }
  return c;
}

AnnealState AnnealState::start(const AnnealConfig& config, long total_steps) {
  AnnealState s;
  s.cycle_length = std::max(1.0, static_cast<double>(total_steps) / config.cycles);
  s.threshold = config.gap_threshold;
  s.lambda = cyclic_beta(0.0, s.cycle_length, config);
  return s;
}

double cyclic_beta(double step, double cycle_length, const AnnealConfig& config) {
  require(cycle_length > 0.0, "cyclic_beta: cycle_length must be positive");
  const double phase = std::fmod(step, cycle_length) / cycle_length;
  return config.lambda_max * std::min(1.0, phase / config.ramp_fraction);
}

AnnealState freeze_gate(double train_loss, double val_loss, AnnealState state) {
  require(std::isfinite(train_loss) && std::isfinite(val_loss), "freeze_gate: losses must be finite");
  state.frozen = val_loss - train_loss > state.threshold;
  return state;
}

AnnealState advance(AnnealState state, const AnnealConfig& config) {
  ++state.step;
  if (!state.frozen) state.lambda = cyclic_beta(static_cast<double>(state.step), state.cycle_length, config);
  return state;
}

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kBoxVae: return "boxvae";
    case Stage::kLabelMapVae: return "labelmapvae";
    case Stage::kBmVae: return "bmvae";
    case Stage::kBsLstm: return "bslstm";
    case Stage::kCgGan: return "cggan";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::kBoxVae, Stage::kLabelMapVae, Stage::kBmVae, Stage::kBsLstm, Stage::kCgGan}) {
    if (s == to_string(st)) return st;
  }
  throw ConfigError("unknown stage '" + s + "'");
}

TrainConfig TrainConfig::preset(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::kBoxVae:
      c.learning_rate = 1e-4;
      c.epochs = 300;
      c.batch_size = 32;
      break;
    case Stage::kLabelMapVae:
    case Stage::kBmVae:
      c.learning_rate = 1e-3;
      c.epochs = 110;
      c.batch_size = 8;
      break;
    case Stage::kBsLstm:
      c.learning_rate = 1e-5;
      c.epochs = 300;
      c.batch_size = 32;
      break;
    case Stage::kCgGan:
      c.learning_rate = 1e-2;
      c.epochs = 110;
      c.batch_size = 8;
      break;
  }
  return c;
}

TrainConfig TrainConfig::from_json(const json& j, std::optional<Stage> stage) {
  Stage st = stage.value_or(Stage::kBoxVae);
  if (!stage && j.contains("stage")) st = stage_from_string(j.at("stage").get<std::string>());
  TrainConfig c = preset(st);
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "stage") continue;
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "clip_norm") c.clip_norm = value.get<double>();
      else if (key == "anneal") c.anneal = AnnealConfig::from_json(value);
      else if (key == "output_dir") c.output_dir = value.get<std::string>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (c.learning_rate <= 0 || c.epochs < 1 || c.batch_size < 1) {
    throw ConfigError("train config: learning_rate, epochs and batch_size must be positive");
  }
  return c;
}

json TrainConfig::to_json() const {
  return {{"stage", to_string(stage)},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"clip_norm", clip_norm},
          {"anneal", anneal.to_json()},
          {"output_dir", output_dir.string()}};
}

json Objective::sample_summary(std::size_t index) const { return {{"index", index}}; }

json EpochMetrics::to_json() const {
  return {{"epoch", epoch},         {"train_recon", train_recon}, {"val_recon", val_recon},
          {"train_total", train_total}, {"val_total", val_total}, {"kl", kl},
          {"lambda", lambda},       {"frozen", frozen}};
}

json schema_sidecar(const dataset::SchemaSet& schemas) {
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(schemas.hash()));
  return {{"schema_hash", hex}, {"schema", schemas.to_json()}};
}

namespace {

struct Accumulator {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
  std::size_t n = 0;

  void add(const SampleLoss& s, double total_value) {
    recon += s.recon;
    kl += s.kl;
    total += total_value;
    ++n;
  }
  double mean(double v) const { return n ? v / static_cast<double>(n) : 0.0; }
};

[[noreturn]] void diverge(Objective& objective, const TrainConfig& config, int epoch,
                          const std::vector<std::size_t>& batch, std::size_t offending,
                          const SampleLoss& loss) {
  json samples = json::array();
  for (std::size_t i : batch) samples.push_back(objective.sample_summary(i));
  const json dump = {{"kind", objective.kind()},
                     {"epoch", epoch},
                     {"offending_sample", objective.sample_summary(offending)},
                     {"recon", loss.recon},
                     {"kl", loss.kl},
                     {"batch", samples}};
  const auto path = config.output_dir / (objective.kind() + ".divergence.json");
  std::ofstream(path) << dump.dump(2) << '\n';
  throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + "; dump written to " +
                        path.string());
}

bool finite(const SampleLoss& s, double total) {
  return std::isfinite(s.recon) && std::isfinite(s.kl) && std::isfinite(total);
}

}  // namespace

TrainResult train_stage(Objective& objective, const std::vector<std::size_t>& train,
                        const std::vector<std::size_t>& val, const TrainConfig& config,
                        const json& extra_sidecar, const EpochCallback& on_epoch) {
  require(config.epochs >= 1 && config.batch_size >= 1, "train_stage: bad config");
  for (std::size_t i : train) require(i < objective.sample_count(), "train index out of range");
  for (std::size_t i : val) require(i < objective.sample_count(), "val index out of range");
  if (train.empty()) throw ValidationError("train_stage: no training samples");
  std::filesystem::create_directories(config.output_dir);

  TrainResult result;
  const std::string kind = objective.kind();
  result.metrics_log = config.output_dir / (kind + ".metrics.jsonl");
  result.best_checkpoint = config.output_dir / (kind + "_best.bin");
  result.last_checkpoint = config.output_dir / (kind + "_last.bin");
  std::ofstream log(result.metrics_log, std::ios::trunc);
  if (!log) throw Error("cannot write " + result.metrics_log.string());

  optim::Adam adam(objective.parameters(),
                   {.learning_rate = config.learning_rate, .clip_norm = config.clip_norm});
  AnnealState anneal = AnnealState::start(config.anneal, config.epochs);
  Rng noise(derive_seed(config.seed, 0x7a11));
  std::vector<std::size_t> order = train;
  double best = std::numeric_limits<double>::infinity();

  json sidecar = extra_sidecar.is_object() ? extra_sidecar : json::object();
  sidecar["kind"] = kind;
  sidecar["model"] = objective.describe();
  sidecar["train_config"] = config.to_json();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lambda = anneal.lambda;
    Rng shuffle(derive_seed(config.seed, 0x5000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle);

    Accumulator tr;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                           order.begin() + static_cast<long>(end));
      adam.zero_grad();
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t i : batch) {
        SampleLoss s = objective.sample_loss(i, noise, lambda);
        const double total = s.objective.item();
        if (!finite(s, total)) diverge(objective, config, epoch, batch, i, s);
        ad::backward(ad::scale(s.objective, inv));
        tr.add(s, total);
      }
      adam.step();
    }

    Accumulator va;
    {
      ad::NoGradGuard guard;
      Rng val_noise(derive_seed(config.seed, 0x9000));
      for (std::size_t i : val) {
        SampleLoss s = objective.sample_loss(i, val_noise, lambda);
        const double total = s.objective.item();
        if (!finite(s, total)) diverge(objective, config, epoch, {i}, i, s);
        va.add(s, total);
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_recon = tr.mean(tr.recon);
    m.train_total = tr.mean(tr.total);
    m.kl = tr.mean(tr.kl);
    m.val_recon = val.empty() ? m.train_recon : va.mean(va.recon);
    m.val_total = val.empty() ? m.train_total : va.mean(va.total);
    m.lambda = lambda;
    anneal = freeze_gate(m.train_total, m.val_total, anneal);
    m.frozen = anneal.frozen;
    anneal = advance(anneal, config.anneal);

    log << m.to_json().dump() << '\n';
    log.flush();
    result.metrics.push_back(m);
    spdlog::debug("{} epoch {} train {:.5f} val {:.5f} kl {:.4f} lambda {:.3f}{}", kind, epoch,
                  m.train_recon, m.val_recon, m.kl, m.lambda, m.frozen ? " frozen" : "");
    if (on_epoch) on_epoch(m);

    sidecar["epoch"] = epoch;
    sidecar["val_recon"] = m.val_recon;
    if (m.val_recon < best) {
      best = m.val_recon;
      checkpoint::save(result.best_checkpoint, objective.parameters(), sidecar);
    }
  }
  checkpoint::save(result.last_checkpoint, objective.parameters(), sidecar);
  result.best_val = best;
  return result;
}

// --- objectives -----------------------------------------------------------------

std::vector<dataset::PartGraph> part_graphs(const dataset::Corpus& corpus) {
  std::vector<dataset::PartGraph> graphs;
  graphs.reserve(corpus.size());
  for (const auto& inst : corpus.instances) {
    graphs.push_back(dataset::build_part_graph(inst, corpus.schemas.by_id(inst.category_id)));
  }
  return graphs;
}

std::vector<labelmap::PartMaskSet> part_masks(const dataset::Corpus& corpus) {
  std::vector<labelmap::PartMaskSet> masks;
  masks.reserve(corpus.size());
  for (const auto& inst : corpus.instances) masks.push_back(labelmap::mask_set(inst, corpus.schemas.p_max()));
  return masks;
}

namespace {

json graph_summary(const dataset::PartGraph& g) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < g.features.rows(); ++r) {
    rows.push_back(std::vector<double>(g.features.row(r).data(), g.features.row(r).data() + 5));
  }
  return {{"category_id", g.category_id}, {"features", rows}};
}

}  // namespace

BoxVaeObjective::BoxVaeObjective(boxvae::BoxVae& model, std::vector<dataset::PartGraph> graphs)
    : model_(model), graphs_(std::move(graphs)) {}

SampleLoss BoxVaeObjective::sample_loss(std::size_t index, Rng& rng, double lambda) {
  const dataset::PartGraph& g = graphs_.at(index);
  const GaussianVars q = model_.encode(g);
  const Var z = reparameterize(q, standard_normal(1, model_.dims().latent, rng));
  const boxvae::ReconTerms recon = boxvae::recon_loss(model_.decode(z, boxvae::Conditioning::of(g)), g);
  const Var kl = kl_gaussian(q);
  return {elbo_loss(recon.total, kl, lambda), recon.total.item(), kl.item()};
}

json BoxVaeObjective::describe() const { return {{"dims", model_.dims().to_json()}}; }

json BoxVaeObjective::sample_summary(std::size_t index) const {
  json j = graph_summary(graphs_.at(index));
  j["index"] = index;
  return j;
}

LabelMapVaeObjective::LabelMapVaeObjective(labelmap::LabelMapVae& model,
                                           std::vector<dataset::PartGraph> graphs,
                                           std::vector<labelmap::PartMaskSet> masks)
    : model_(model), graphs_(std::move(graphs)), masks_(std::move(masks)) {
  require(graphs_.size() == masks_.size(), "LabelMapVaeObjective: graphs and masks differ in size");
}

SampleLoss LabelMapVaeObjective::sample_loss(std::size_t index, Rng& rng, double lambda) {
  const labelmap::BoxCondition cond = labelmap::BoxCondition::of(graphs_.at(index));
  const labelmap::PartMaskSet& target = masks_.at(index);
  const GaussianVars q = model_.encode(ad::constant(target.masks), cond);
  const Var z = reparameterize(q, standard_normal(1, model_.dims().latent, rng));
  const Var recon = labelmap::mask_recon_loss(model_.decode(z, cond), target);
  const Var kl = kl_gaussian(q);
  return {elbo_loss(recon, kl, lambda), recon.item(), kl.item()};
}

json LabelMapVaeObjective::describe() const { return {{"dims", model_.dims().to_json()}}; }

json LabelMapVaeObjective::sample_summary(std::size_t index) const {
  json j = graph_summary(graphs_.at(index));
  j["index"] = index;
  return j;
}

// --- evaluation -----------------------------------------------------------------

dataset::Box canonical_box(double x0, double y0, double x1, double y1) {
  auto axis = [](double a, double b, double& lo, double& hi) {
    lo = std::min(a, b);
    hi = std::max(a, b);
    if (hi - lo < dataset::kMinBoxSize) {
      const double c = std::clamp(0.5 * (lo + hi), -1.0 + 0.5 * dataset::kMinBoxSize,
                                  1.0 - 0.5 * dataset::kMinBoxSize);
      lo = c - 0.5 * dataset::kMinBoxSize;
      hi = c + 0.5 * dataset::kMinBoxSize;
    }
  };
  dataset::Box b;
  axis(x0, x1, b.x_min, b.x_max);
  axis(y0, y1, b.y_min, b.y_max);
  return b;
}

BoxReconstructionReport evaluate_box_reconstruction(const boxvae::BoxVae& model,
                                                    const std::vector<dataset::PartGraph>& graphs,
                                                    const dataset::SchemaSet& schemas,
                                                    std::uint64_t seed) {
  BoxReconstructionReport r;
  std::size_t slots = 0, correct = 0, boxes = 0;
  double iou_sum = 0.0, recon_sum = 0.0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const dataset::PartGraph& g = graphs[i];
    const GaussianParams q = model.encode_params(g);
    const Matrix z = reparameterize(q, derive_seed(seed, i));
    const boxvae::BoxDecodeOutput out = model.decode_output(z, boxvae::Conditioning::of(g));
    recon_sum += boxvae::boxvae_recon_loss(out, g).total;
    const int parts = schemas.by_id(g.category_id).part_count();
    for (int k = 0; k < parts; ++k) {
      const bool truth = g.presence[static_cast<std::size_t>(k)] != 0;
      const bool predicted = out.presence_probs(0, k) >= 0.5;
      correct += truth == predicted ? 1 : 0;
      ++slots;
      if (!truth) continue;
      const dataset::Box b = canonical_box(out.boxes(k, 0), out.boxes(k, 1), out.boxes(k, 2), out.boxes(k, 3));
      iou_sum += boxvae::box_iou(b, g.box(k));
      ++boxes;
    }
  }
  r.instances = graphs.size();
  r.presence_accuracy = slots ? static_cast<double>(correct) / static_cast<double>(slots) : 0.0;
  r.mean_iou = boxes ? iou_sum / static_cast<double>(boxes) : 0.0;
  r.mean_recon = graphs.empty() ? 0.0 : recon_sum / static_cast<double>(graphs.size());
  return r;
}

double evaluate_mask_reconstruction(const labelmap::LabelMapVae& model,
                                    const std::vector<dataset::PartGraph>& graphs,
                                    const std::vector<labelmap::PartMaskSet>& masks, std::uint64_t seed) {
  require(graphs.size() == masks.size(), "evaluate_mask_reconstruction: size mismatch");
  if (graphs.empty()) return 0.0;
  ad::NoGradGuard guard;
  double sum = 0.0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const labelmap::BoxCondition cond = labelmap::BoxCondition::of(graphs[i]);
    const GaussianParams q = model.encode_params(masks[i], cond);
    const Matrix z = reparameterize(q, derive_seed(seed, i));
    sum += labelmap::mask_recon_loss(model.decode(ad::constant(z), cond).value(), masks[i]);
  }
  return sum / static_cast<double>(graphs.size());
}

}  // namespace opal::training
