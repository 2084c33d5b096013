// SPDX-License-Identifier: Apache-2.0
//
// Part-annotated object corpora: schemas, normalization to the [-1, 1]
// object frame, augmentation, part graphs, splits and a synthetic generator.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opal/autodiff.hpp"
#include "opal/raster.hpp"

namespace opal::dataset {

using ad::Matrix;

/// Corner-form box in the normalized object frame (x right, y down).
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const;

  bool operator==(const Box&) const = default;
};

nlohmann::json to_json(const Box& b);
Box box_from_json(const nlohmann::json& j);

struct PartSchema {
  int category_id = 0;  // 1-based
  std::string category_name;
  std::vector<std::string> part_names;  // canonical order
  int p_max = 0;
  /// Paste order for label-map composition; canonical indices. Empty means
  /// canonical order.
  std::vector<int> paste_order;

  int part_index(const std::string& name) const;  // -1 if unknown
  int part_count() const { return static_cast<int>(part_names.size()); }
  std::vector<int> effective_paste_order() const;
};

/// All categories of a corpus; ids are 1..M in order.
class SchemaSet {
 public:
  SchemaSet() = default;
  explicit SchemaSet(std::vector<PartSchema> categories);

  const std::vector<PartSchema>& categories() const { return categories_; }
  int num_categories() const { return static_cast<int>(categories_.size()); }
  int p_max() const { return p_max_; }
  const PartSchema& by_id(int category_id) const;
  const PartSchema* find_by_name(const std::string& name) const;
  /// Stable FNV-1a hash of the canonical JSON form.
  std::uint64_t hash() const;

  nlohmann::json to_json() const;
  static SchemaSet from_json(const nlohmann::json& j);
  static SchemaSet load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<PartSchema> categories_;
  int p_max_ = 0;
};

struct ObjectInstance {
  std::string image_id;
  int category_id = 0;
  std::map<int, Raster> part_masks;  // native resolution, full image
  int height = 0;
  int width = 0;
};

struct NormalizedInstance {
  std::string id;
  int category_id = 0;
  std::map<int, Box> part_boxes;
  /// Each mask is cropped to its part's tight box, native resolution.
  std::map<int, Raster> part_masks;
  std::vector<std::uint8_t> presence;  // length p_max

  bool operator==(const NormalizedInstance&) const = default;
};

struct PartGraph {
  Matrix features;   // p_max x 5: [presence, x_min, y_min, x_max, y_max]
  Matrix adjacency;  // p_max x p_max, {0, 1}, symmetric, zero diagonal
  int category_id = 0;
  std::vector<std::uint8_t> presence;

  int p_max() const { return static_cast<int>(features.rows()); }
  Box box(int row) const;
};

enum class SplitTag { kUnset, kTrain, kVal, kTest };
const char* to_string(SplitTag t);

struct Corpus {
  SchemaSet schemas;
  std::vector<NormalizedInstance> instances;
  std::vector<SplitTag> tags;        // parallel to instances
  std::vector<std::string> errors;   // unreadable/degenerate inputs, one line each
  std::vector<std::string> warnings;
  int skipped_unknown_category = 0;

  std::size_t size() const { return instances.size(); }
  std::vector<std::size_t> indices(SplitTag tag) const;
};

/// Returns the normalized instance; throws DegenerateError when every mask is
/// empty. Empty masks are dropped as absent parts.
NormalizedInstance normalize_instance(const ObjectInstance& obj, int p_max);

/// Recenters the union of boxes at the origin and rescales so that the larger
/// axis spans [-1, 1]. A no-op (bit-exact) when already normalized.
NormalizedInstance renormalize(const NormalizedInstance& inst);

struct AugmentPolicy {
  double translation = 0.0;     // per-part shift, uniform in +-translation
  double part_scale = 0.0;      // per-part anisotropic factor in [1-s, 1+s]
  double object_scale = 0.0;    // object-level anisotropic factor in [1-s, 1+s]
  double mirror_probability = 0.0;
  /// Deterministic per-part factors (canonical index -> (sx, sy)) applied about
  /// the box centre before the random ones; used for controlled edits.
  std::map<int, std::pair<double, double>> fixed_part_scale;

  static AugmentPolicy from_json(const nlohmann::json& j);
};

struct AugmentReport {
  int clamp_events = 0;
  bool mirrored = false;
};

inline constexpr double kMinBoxSize = 1e-3;

NormalizedInstance augment(const NormalizedInstance& inst, std::uint64_t seed,
                           const AugmentPolicy& policy, AugmentReport* report = nullptr);
NormalizedInstance mirror(const NormalizedInstance& inst);

using AdjacencyRule = std::function<bool(const Box&, const Box&)>;
inline constexpr double kAdjacencyDilation = 0.02;
/// Boxes are adjacent when they intersect after each is grown by `epsilon`.
AdjacencyRule dilated_overlap_rule(double epsilon = kAdjacencyDilation);

PartGraph build_part_graph(const NormalizedInstance& inst, const PartSchema& schema,
                           const AdjacencyRule& rule = dilated_overlap_rule());

struct SplitRatios {
  double train = 0.75;
  double val = 0.15;
  double test = 0.10;
};

/// Stratified by category: val and test take floor(ratio * n), train the rest.
/// Categories with fewer than three instances go entirely to train.
Corpus split_corpus(Corpus corpus, std::uint64_t seed, SplitRatios ratios = {});

/// Reads an annotation manifest (see README) below `root`. When `manifest` is
/// empty, `root/manifest.json` is used; an empty `root` yields an empty corpus.
Corpus load_corpus(const std::filesystem::path& root, const SchemaSet& schemas,
                   const std::filesystem::path& manifest = {});

/// Writes raw instances as manifest.json + PNG masks + schema.json in the
/// layout load_corpus reads.
void write_annotations(const std::vector<ObjectInstance>& objects, const SchemaSet& schemas,
                       const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Synthetic corpus

enum class PrimitiveShape { kEllipse, kRectangle };

struct PartTemplate {
  std::string name;
  PrimitiveShape shape = PrimitiveShape::kRectangle;
  double width = 0.2;    // fraction of canvas
  double height = 0.2;
  double size_jitter = 0.1;  // relative
  std::string parent;        // empty: root, centred on the canvas
  std::string side = "center";  // top | bottom | left | right | center
  double offset = 0.0;          // along the parent's side, in parent extents
  double offset_jitter = 0.0;
  double overlap = 0.2;  // fraction of own extent pushed into the parent
  double dropout = 0.0;
  /// Larger values are pasted first when composing layouts.
  double paste_priority = 0.0;
};

struct CategoryTemplate {
  std::string name;
  int instances = 50;
  std::vector<PartTemplate> parts;
};

struct SynthConfig {
  int canvas = 128;
  std::vector<CategoryTemplate> categories;

  static SynthConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Two categories (biped, glider) of at most six parts.
  static SynthConfig default_config(int instances_per_category = 50);
};

SchemaSet synth_schemas(const SynthConfig& config);
/// Raw rasterized instances (before normalization).
std::vector<ObjectInstance> synth_objects(const SynthConfig& config, std::uint64_t seed);
Corpus synth_generate(const SynthConfig& config, std::uint64_t seed);

}  // namespace opal::dataset
