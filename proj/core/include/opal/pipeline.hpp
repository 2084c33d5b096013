// SPDX-License-Identifier: Apache-2.0
//
// End-to-end generation (boxes from BoxVae, masks from LabelMapVae, then
// composition) and the interactive operations built on it: box edits with mask
// regeneration, and adding a part to an existing object.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opal/boxvae.hpp"
#include "opal/dataset.hpp"
#include "opal/labelmap.hpp"

namespace opal::pipeline {

using dataset::Box;

struct GenerationRequest {
  int category_id = 0;
  std::vector<int> parts;  // canonical indices, ascending, unique
  std::uint64_t seed = 0;
  /// Boxes used instead of decoded ones for the listed parts.
  std::map<int, Box> fixed_boxes;

  std::vector<std::uint8_t> presence(int p_max) const;

  /// Accepts {"category": name | id, "parts": [name | index], "seed": n,
  /// "fixed_boxes": {name: [x0, y0, x1, y1]}}. Unknown categories or parts
  /// raise ValidationError.
  static GenerationRequest from_json(const nlohmann::json& j, const dataset::SchemaSet& schemas);
  nlohmann::json to_json(const dataset::SchemaSet& schemas) const;
};

struct EditCommand {
  enum class Op { kMove, kAdd, kRemove };
  Op op = Op::kMove;
  int part_index = 0;
  Box box;  // unused for kRemove

  /// {"op": "move" | "add" | "remove", "part": name | index, "box": [x0, y0, x1, y1]};
  /// "op" defaults to "move".
  static EditCommand from_json(const nlohmann::json& j, const dataset::PartSchema& schema);
  nlohmann::json to_json(const dataset::PartSchema& schema) const;
};

/// Immutable pair of trained models plus the schema they were trained on.
class ModelBundle {
 public:
  ModelBundle(dataset::SchemaSet schemas, std::shared_ptr<const boxvae::BoxVae> boxes,
              std::shared_ptr<const labelmap::LabelMapVae> masks);

  /// Reads dims and schema from the checkpoint sidecars. Throws
  /// CheckpointError when the two schemas differ or a sidecar lacks one.
  static ModelBundle load(const std::filesystem::path& box_checkpoint,
                          const std::filesystem::path& mask_checkpoint);

  const dataset::SchemaSet& schemas() const { return schemas_; }
  const boxvae::BoxVae& box_model() const { return *boxes_; }
  const labelmap::LabelMapVae& mask_model() const { return *masks_; }

 private:
  dataset::SchemaSet schemas_;
  std::shared_ptr<const boxvae::BoxVae> boxes_;
  std::shared_ptr<const labelmap::LabelMapVae> masks_;
};

/// State of one generated or edited object.
struct LayoutResult {
  dataset::PartGraph graph;  // presence and boxes actually used
  labelmap::PartMaskSet masks;
  labelmap::ObjectLayout layout;
  std::vector<std::string> notices;

  std::map<int, Box> boxes() const;
  /// {"category", "parts", "boxes", "hash", "notices", "warnings"}.
  nlohmann::json summary(const dataset::SchemaSet& schemas) const;
};

/// z from stream 0 of the seed decodes boxes; requested parts are present
/// regardless of the presence head. z' from stream 1 decodes the masks.
LayoutResult generate_layout(const GenerationRequest& req, const ModelBundle& models);

/// Checks an edited box: finite, min < max on both axes, and overlapping the
/// [-1, 1] canvas. Returns the reason on failure.
std::optional<std::string> box_problem(const Box& b);

/// Applies edits to `boxes` and regenerates every mask with the z' of
/// req.seed. Throws ValidationError (the reason) on an invalid edit.
LayoutResult edit_and_regenerate(const std::map<int, Box>& boxes, const std::vector<EditCommand>& edits,
                                 const GenerationRequest& req, const ModelBundle& models);

/// Adds part `part_index` to an existing object. Its box comes from a
/// posterior sample of the box encoder decoded under the augmented part list;
/// its mask from a posterior sample of the mask encoder decoded under the
/// augmented boxes. Every original box and mask is kept.
LayoutResult add_part(const LayoutResult& original, int part_index, const ModelBundle& models,
                      std::uint64_t seed);
LayoutResult add_part(const dataset::NormalizedInstance& inst, int part_index, const ModelBundle& models,
                      std::uint64_t seed);

/// State for an existing instance: its boxes and its resampled ground-truth masks.
LayoutResult layout_of(const dataset::NormalizedInstance& inst, const ModelBundle& models);

struct GenerationStats {
  std::size_t generations = 0;
  std::size_t requested_parts = 0;
  std::size_t requested_drawn = 0;  // requested parts with at least one labelled pixel
  std::size_t containment_ok = 0;   // layouts satisfying box containment

  double requested_present_rate() const;
  double containment_rate() const;
  nlohmann::json to_json() const;
};

GenerationStats generation_stats(const std::vector<GenerationRequest>& requests, const ModelBundle& models);

}  // namespace opal::pipeline
