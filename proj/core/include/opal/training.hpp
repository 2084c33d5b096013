// SPDX-License-Identifier: Apache-2.0
//
// Variational objectives, the cyclic KL schedule with loss-gap freezing, and
// the mini-batch training loop shared by every VAE-style model.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opal/boxvae.hpp"
#include "opal/dataset.hpp"
#include "opal/labelmap.hpp"
#include "opal/latent.hpp"
#include "opal/optim.hpp"

namespace opal::training {

using ad::Matrix;
using ad::Var;

/// KL(N(mu, exp(log_var)) || N(0, I)) = 1/2 sum(exp(lv) + mu^2 - 1 - lv).
Var kl_gaussian(const GaussianVars& g);
double kl_gaussian(const GaussianParams& g);

/// recon + lambda * kl.
Var elbo_loss(const Var& recon, const Var& kl, double lambda);
double elbo_loss(double recon, double kl, double lambda);

struct AnnealConfig {
  double lambda_max = 1.0;
  int cycles = 4;
  /// Fraction of each cycle spent ramping from 0 to lambda_max.
  double ramp_fraction = 0.5;
  double gap_threshold = 0.1;

  nlohmann::json to_json() const;
  static AnnealConfig from_json(const nlohmann::json& j);
};

struct AnnealState {
  long step = 0;
  double lambda = 0.0;
  double cycle_length = 1.0;
  bool frozen = false;
  double threshold = 0.1;

  /// State at step 0 of a run of `total_steps` schedule steps.
  static AnnealState start(const AnnealConfig& config, long total_steps);
};

/// Linear ramp over the first ramp_fraction of each cycle, then lambda_max.
double cyclic_beta(double step, double cycle_length, const AnnealConfig& config);

/// Frozen exactly when val_loss - train_loss > state.threshold.
AnnealState freeze_gate(double train_loss, double val_loss, AnnealState state);

/// Moves to the next step; lambda follows the schedule unless frozen.
AnnealState advance(AnnealState state, const AnnealConfig& config);

enum class Stage { kBoxVae, kLabelMapVae, kBmVae, kBsLstm, kCgGan };
const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::kBoxVae;
  double learning_rate = 1e-4;
  int epochs = 300;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;
  AnnealConfig anneal;
  std::filesystem::path output_dir = "runs";

  /// Learning rate, epochs and batch size of the published setup per stage.
  static TrainConfig preset(Stage stage);
  /// Unknown keys raise ConfigError; missing keys keep the stage preset.
  static TrainConfig from_json(const nlohmann::json& j, std::optional<Stage> stage = {});
  nlohmann::json to_json() const;
};

struct SampleLoss {
  Var objective;  // differentiable, recon + lambda * kl
  double recon = 0.0;
  double kl = 0.0;
};

/// A model together with its per-sample training objective.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::string kind() const = 0;
  virtual nn::ParameterSet& parameters() = 0;
  virtual std::size_t sample_count() const = 0;
  virtual SampleLoss sample_loss(std::size_t index, Rng& rng, double lambda) = 0;
  /// Model description written to the checkpoint sidecar.
  virtual nlohmann::json describe() const = 0;
  /// JSON summary of a sample used in divergence dumps.
  virtual nlohmann::json sample_summary(std::size_t index) const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_recon = 0.0;
  double val_recon = 0.0;
  double train_total = 0.0;
  double val_total = 0.0;
  double kl = 0.0;
  double lambda = 0.0;
  bool frozen = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_log;
  double best_val = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains `objective` with Adam on the `train` sample indices and validates on
/// `val` after every epoch. Writes `<kind>.metrics.jsonl`, `<kind>_best.bin`
/// and `<kind>_last.bin` (with sidecars) into config.output_dir. A non-finite
/// loss writes `<kind>.divergence.json` and throws DivergenceError.
TrainResult train_stage(Objective& objective, const std::vector<std::size_t>& train,
                        const std::vector<std::size_t>& val, const TrainConfig& config,
                        const nlohmann::json& extra_sidecar = {},
                        const EpochCallback& on_epoch = {});

/// Sidecar block that ties a checkpoint to the schema it was trained on.
nlohmann::json schema_sidecar(const dataset::SchemaSet& schemas);

// --- objectives -----------------------------------------------------------------

std::vector<dataset::PartGraph> part_graphs(const dataset::Corpus& corpus);
std::vector<labelmap::PartMaskSet> part_masks(const dataset::Corpus& corpus);

class BoxVaeObjective : public Objective {
 public:
  BoxVaeObjective(boxvae::BoxVae& model, std::vector<dataset::PartGraph> graphs);
  std::string kind() const override { return "boxvae"; }
  nn::ParameterSet& parameters() override { return model_.parameters(); }
  std::size_t sample_count() const override { return graphs_.size(); }
  SampleLoss sample_loss(std::size_t index, Rng& rng, double lambda) override;
  nlohmann::json describe() const override;
  nlohmann::json sample_summary(std::size_t index) const override;

 private:
  boxvae::BoxVae& model_;
  std::vector<dataset::PartGraph> graphs_;
};

/// Teacher-forced: conditioning boxes are the ground truth.
class LabelMapVaeObjective : public Objective {
 public:
  LabelMapVaeObjective(labelmap::LabelMapVae& model, std::vector<dataset::PartGraph> graphs,
                       std::vector<labelmap::PartMaskSet> masks);
  std::string kind() const override { return "labelmapvae"; }
  nn::ParameterSet& parameters() override { return model_.parameters(); }
  std::size_t sample_count() const override { return graphs_.size(); }
  SampleLoss sample_loss(std::size_t index, Rng& rng, double lambda) override;
  nlohmann::json describe() const override;
  nlohmann::json sample_summary(std::size_t index) const override;

 private:
  labelmap::LabelMapVae& model_;
  std::vector<dataset::PartGraph> graphs_;
  std::vector<labelmap::PartMaskSet> masks_;
};

// --- evaluation -----------------------------------------------------------------

struct BoxReconstructionReport {
  double presence_accuracy = 0.0;  // over the schema's part slots of every instance
  double mean_iou = 0.0;           // over present ground-truth parts
  double mean_recon = 0.0;
  std::size_t instances = 0;
};

/// Encodes each graph, draws one posterior sample (stream i of `seed` for
/// graph i) and decodes it under the graph's own conditioning.
BoxReconstructionReport evaluate_box_reconstruction(const boxvae::BoxVae& model,
                                                    const std::vector<dataset::PartGraph>& graphs,
                                                    const dataset::SchemaSet& schemas,
                                                    std::uint64_t seed = 0);

/// Mean mask cross-entropy of one posterior sample per instance (stream i of
/// `seed` for instance i), decoded under the ground-truth boxes.
double evaluate_mask_reconstruction(const labelmap::LabelMapVae& model,
                                    const std::vector<dataset::PartGraph>& graphs,
                                    const std::vector<labelmap::PartMaskSet>& masks, std::uint64_t seed = 0);

/// Orders corners so that min < max and enforces the minimum box size.
dataset::Box canonical_box(double x0, double y0, double x1, double y1);

}  // namespace opal::training
