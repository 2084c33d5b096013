// SPDX-License-Identifier: Apache-2.0
#include "opal/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "opal/error.hpp"
#include "opal/hash.hpp"
#include "opal/random.hpp"

namespace opal::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

json to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("box must be [x_min, y_min, x_max, y_max]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

int PartSchema::part_index(const std::string& name) const {
  const auto it = std::find(part_names.begin(), part_names.end(), name);
  return it == part_names.end() ? -1 : static_cast<int>(it - part_names.begin());
}

std::vector<int> PartSchema::effective_paste_order() const {
  if (!paste_order.empty()) return paste_order;
  std::vector<int> order(part_names.size());
  std::iota(order.begin(), order.end(), 0);
  return order;
}

SchemaSet::SchemaSet(std::vector<PartSchema> categories) : categories_(std::move(categories)) {
  p_max_ = 0;
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    auto& c = categories_[i];
    if (c.category_id != static_cast<int>(i) + 1) {
      throw ConfigError("category ids must be 1..M in order; got " +
                        std::to_string(c.category_id) + " at position " + std::to_string(i + 1));
    }
    std::set<std::string> seen(c.part_names.begin(), c.part_names.end());
    if (seen.size() != c.part_names.size()) {
      throw ConfigError("duplicate part names in category " + c.category_name);
    }
    if (c.part_names.empty()) throw ConfigError("category " + c.category_name + " has no parts");
    p_max_ = std::max(p_max_, c.part_count());
    if (!c.paste_order.empty()) {
      std::vector<int> sorted = c.paste_order;
      std::sort(sorted.begin(), sorted.end());
      std::vector<int> expected(c.part_names.size());
      std::iota(expected.begin(), expected.end(), 0);
      if (sorted != expected) throw ConfigError("paste_order must permute the part list");
    }
  }
  for (auto& c : categories_) c.p_max = p_max_;
}

const PartSchema& SchemaSet::by_id(int category_id) const {
  if (category_id < 1 || category_id > num_categories()) {
    throw ValidationError("unknown category id " + std::to_string(category_id));
  }
  return categories_[static_cast<std::size_t>(category_id - 1)];
}

const PartSchema* SchemaSet::find_by_name(const std::string& name) const {
  for (const auto& c : categories_) {
    if (c.category_name == name) return &c;
  }
  return nullptr;
}

json SchemaSet::to_json() const {
  json cats = json::array();
  for (const auto& c : categories_) {
    json entry = {{"id", c.category_id}, {"name", c.category_name}, {"parts", c.part_names}};
    if (!c.paste_order.empty()) {
      json order = json::array();
      for (int k : c.paste_order) order.push_back(c.part_names[static_cast<std::size_t>(k)]);
      entry["paste_order"] = order;
    }
    cats.push_back(entry);
  }
  return {{"categories", cats}, {"p_max", p_max_}};
}

std::uint64_t SchemaSet::hash() const { return fnv1a64(to_json().dump()); }

SchemaSet SchemaSet::from_json(const json& j) {
  if (!j.contains("categories") || !j["categories"].is_array()) {
    throw ConfigError("schema: missing 'categories' array");
  }
  std::vector<PartSchema> cats;
  for (const auto& c : j["categories"]) {
    PartSchema s;
    s.category_id = c.at("id").get<int>();
    s.category_name = c.at("name").get<std::string>();
    s.part_names = c.at("parts").get<std::vector<std::string>>();
    if (c.contains("paste_order")) {
      for (const auto& name : c["paste_order"]) {
        const int k = s.part_index(name.get<std::string>());
        if (k < 0) throw ConfigError("paste_order names unknown part " + name.get<std::string>());
        s.paste_order.push_back(k);
      }
    }
    cats.push_back(std::move(s));
  }
  SchemaSet out(std::move(cats));
  if (j.contains("p_max") && j["p_max"].get<int>() != out.p_max()) {
    throw ConfigError("schema: p_max does not match the largest part list");
  }
  return out;
}

SchemaSet SchemaSet::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("schema " + path.string() + ": " + e.what());
  }
}

void SchemaSet::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

Box PartGraph::box(int row) const {
  return {features(row, 1), features(row, 2), features(row, 3), features(row, 4)};
}

const char* to_string(SplitTag t) {
  switch (t) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kVal: return "val";
    case SplitTag::kTest: return "test";
    case SplitTag::kUnset: break;
  }
  return "unset";
}

std::vector<std::size_t> Corpus::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == tag) out.push_back(i);
  }
  return out;
}

NormalizedInstance normalize_instance(const ObjectInstance& obj, int p_max) {
  struct Bounds {
    int x0, y0, x1, y1;
  };
  std::map<int, Bounds> bounds;
  int ux0 = 0, uy0 = 0, ux1 = 0, uy1 = 0;
  for (const auto& [k, mask] : obj.part_masks) {
    require(k >= 0 && k < p_max, "part index beyond p_max");
    Bounds b{};
    if (!foreground_bounds(mask, b.x0, b.y0, b.x1, b.y1)) continue;
    if (bounds.empty()) {
      ux0 = b.x0, uy0 = b.y0, ux1 = b.x1, uy1 = b.y1;
    } else {
      ux0 = std::min(ux0, b.x0), uy0 = std::min(uy0, b.y0);
      ux1 = std::max(ux1, b.x1), uy1 = std::max(uy1, b.y1);
    }
    bounds.emplace(k, b);
  }
  if (bounds.empty()) {
    throw DegenerateError("instance " + obj.image_id + " has no nonempty part mask");
  }
  const double cx = 0.5 * (ux0 + ux1);
  const double cy = 0.5 * (uy0 + uy1);
  const double half = 0.5 * std::max(ux1 - ux0, uy1 - uy0);

  NormalizedInstance out;
  out.id = obj.image_id;
  out.category_id = obj.category_id;
  out.presence.assign(static_cast<std::size_t>(p_max), 0);
  for (const auto& [k, b] : bounds) {
    out.part_boxes[k] = {(b.x0 - cx) / half, (b.y0 - cy) / half, (b.x1 - cx) / half,
                         (b.y1 - cy) / half};
    out.part_masks[k] = crop(obj.part_masks.at(k), b.x0, b.y0, b.x1, b.y1);
    out.presence[static_cast<std::size_t>(k)] = 1;
  }
  return out;
}

NormalizedInstance renormalize(const NormalizedInstance& inst) {
  if (inst.part_boxes.empty()) return inst;
  double ux0 = 0, uy0 = 0, ux1 = 0, uy1 = 0;
  bool first = true;
  for (const auto& [k, b] : inst.part_boxes) {
    if (first) {
      ux0 = b.x_min, uy0 = b.y_min, ux1 = b.x_max, uy1 = b.y_max;
      first = false;
    } else {
      ux0 = std::min(ux0, b.x_min), uy0 = std::min(uy0, b.y_min);
      ux1 = std::max(ux1, b.x_max), uy1 = std::max(uy1, b.y_max);
    }
  }
  const double cx = 0.5 * (ux0 + ux1);
  const double cy = 0.5 * (uy0 + uy1);
  const double half = 0.5 * std::max(ux1 - ux0, uy1 - uy0);
  constexpr double kTol = 1e-12;
  if (std::abs(cx) <= kTol && std::abs(cy) <= kTol && std::abs(half - 1.0) <= kTol) return inst;
  require(half > 0.0, "renormalize: zero-extent union");
  NormalizedInstance out = inst;
  for (auto& [k, b] : out.part_boxes) {
    b = {(b.x_min - cx) / half, (b.y_min - cy) / half, (b.x_max - cx) / half,
         (b.y_max - cy) / half};
  }
  return out;
}

AugmentPolicy AugmentPolicy::from_json(const json& j) {
  AugmentPolicy p;
  p.translation = j.value("translation", 0.0);
  p.part_scale = j.value("part_scale", 0.0);
  p.object_scale = j.value("object_scale", 0.0);
  p.mirror_probability = j.value("mirror_probability", 0.0);
  return p;
}

NormalizedInstance mirror(const NormalizedInstance& inst) {
  NormalizedInstance out = inst;
  for (auto& [k, b] : out.part_boxes) {
    const double x0 = b.x_min;
    b.x_min = -b.x_max;
    b.x_max = -x0;
  }
  for (auto& [k, m] : out.part_masks) m = flip_horizontal(m);
  return out;
}

NormalizedInstance augment(const NormalizedInstance& inst, std::uint64_t seed,
                           const AugmentPolicy& policy, AugmentReport* report) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto symmetric = [&](double range) { return range * (2.0 * unit(rng) - 1.0); };
  AugmentReport local;

  NormalizedInstance out = inst;
  for (auto& [k, b] : out.part_boxes) {
    double cx = b.center_x(), cy = b.center_y();
    double w = b.width(), h = b.height();
    if (const auto it = policy.fixed_part_scale.find(k); it != policy.fixed_part_scale.end()) {
      w *= it->second.first;
      h *= it->second.second;
    }
    if (policy.part_scale > 0.0) {
      w *= 1.0 + symmetric(policy.part_scale);
      h *= 1.0 + symmetric(policy.part_scale);
    }
    if (policy.translation > 0.0) {
      cx += symmetric(policy.translation);
      cy += symmetric(policy.translation);
    }
    if (w != b.width() || h != b.height() || cx != b.center_x() || cy != b.center_y()) {
      b = {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    }
  }
  if (policy.object_scale > 0.0) {
    const double sx = 1.0 + symmetric(policy.object_scale);
    const double sy = 1.0 + symmetric(policy.object_scale);
    for (auto& [k, b] : out.part_boxes) b = {b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy};
  }
  if (policy.mirror_probability > 0.0 && unit(rng) < policy.mirror_probability) {
    out = mirror(out);
    local.mirrored = true;
  }
  for (auto& [k, b] : out.part_boxes) {
    if (b.width() < kMinBoxSize) {
      const double c = b.center_x();
      b.x_min = c - 0.5 * kMinBoxSize;
      b.x_max = c + 0.5 * kMinBoxSize;
      ++local.clamp_events;
    }
    if (b.height() < kMinBoxSize) {
      const double c = b.center_y();
      b.y_min = c - 0.5 * kMinBoxSize;
      b.y_max = c + 0.5 * kMinBoxSize;
      ++local.clamp_events;
    }
  }
  out = renormalize(out);
  if (report) *report = local;
  return out;
}

AdjacencyRule dilated_overlap_rule(double epsilon) {
  return [epsilon](const Box& a, const Box& b) {
    return a.x_min - epsilon <= b.x_max + epsilon && b.x_min - epsilon <= a.x_max + epsilon &&
           a.y_min - epsilon <= b.y_max + epsilon && b.y_min - epsilon <= a.y_max + epsilon;
  };
}

PartGraph build_part_graph(const NormalizedInstance& inst, const PartSchema& schema,
                           const AdjacencyRule& rule) {
  require(inst.category_id == schema.category_id, "instance category does not match schema");
  const int p = schema.p_max;
  PartGraph g;
  g.category_id = inst.category_id;
  g.features = Matrix::Zero(p, 5);
  g.adjacency = Matrix::Zero(p, p);
  g.presence.assign(static_cast<std::size_t>(p), 0);
  for (const auto& [k, b] : inst.part_boxes) {
    require(k < schema.part_count(), "part index outside the category's part list");
    g.features.row(k) << 1.0, b.x_min, b.y_min, b.x_max, b.y_max;
    g.presence[static_cast<std::size_t>(k)] = 1;
  }
  for (auto a = inst.part_boxes.begin(); a != inst.part_boxes.end(); ++a) {
    for (auto b = std::next(a); b != inst.part_boxes.end(); ++b) {
      if (rule(a->second, b->second)) {
        g.adjacency(a->first, b->first) = 1.0;
        g.adjacency(b->first, a->first) = 1.0;
      }
    }
  }
  return g;
}

Corpus split_corpus(Corpus corpus, std::uint64_t seed, SplitRatios ratios) {
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 || ratios.train < 0 ||
      ratios.val < 0 || ratios.test < 0) {
    throw ValidationError("split ratios must be nonnegative and sum to 1");
  }
  corpus.tags.assign(corpus.instances.size(), SplitTag::kTrain);
  std::map<int, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < corpus.instances.size(); ++i) {
    by_category[corpus.instances[i].category_id].push_back(i);
  }
  for (auto& [category, members] : by_category) {
    const std::size_t n = members.size();
    if (n < 3) {
      corpus.warnings.push_back("category " + std::to_string(category) + " has " +
                                std::to_string(n) + " instances; all assigned to train");
      continue;
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(category)));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * n + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n + 1e-9));
    for (std::size_t i = 0; i < n; ++i) {
      SplitTag tag = SplitTag::kTrain;
      if (i < n_val) {
        tag = SplitTag::kVal;
      } else if (i < n_val + n_test) {
        tag = SplitTag::kTest;
      }
      corpus.tags[members[i]] = tag;
    }
  }
  return corpus;
}

Corpus load_corpus(const fs::path& root, const SchemaSet& schemas, const fs::path& manifest) {
  Corpus corpus;
  corpus.schemas = schemas;
  fs::path manifest_path = manifest;
  if (manifest_path.empty()) {
    manifest_path = root / "manifest.json";
    if (!fs::exists(manifest_path)) {
      if (!fs::exists(root) || fs::is_empty(root)) return corpus;
      throw ConfigError("no manifest.json under " + root.string());
    }
  } else if (!fs::exists(manifest_path)) {
    throw ConfigError("manifest not found: " + manifest_path.string());
  }

  json doc;
  {
    std::ifstream in(manifest_path);
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("manifest " + manifest_path.string() + ": " + e.what());
    }
  }
  const json& entries = doc.is_array() ? doc : doc.value("instances", json::array());
  if (!entries.is_array()) throw ConfigError("manifest: expected an array of instances");

  for (const auto& entry : entries) {
    const std::string image_id = entry.value("image_id", std::string("?"));
    const std::string category = entry.value("category", std::string());
    const PartSchema* schema = schemas.find_by_name(category);
    if (!schema) {
      ++corpus.skipped_unknown_category;
      continue;
    }
    ObjectInstance obj;
    obj.image_id = image_id;
    obj.category_id = schema->category_id;
    std::string failure;
    const json parts = entry.value("parts", json::object());
    for (const auto& [part_name, file] : parts.items()) {
      const int k = schema->part_index(part_name);
      if (k < 0) {
        failure = "unknown part '" + part_name + "'";
        break;
      }
      if (!file.is_string()) {
        failure = "mask path of part '" + part_name + "' is not a string";
        break;
      }
      try {
        Raster r = read_png_mask(root / file.get<std::string>());
        if (obj.part_masks.empty()) {
          obj.height = r.height;
          obj.width = r.width;
        } else if (r.height != obj.height || r.width != obj.width) {
          failure = "mask sizes differ within the instance";
          break;
        }
        obj.part_masks.emplace(k, std::move(r));
      } catch (const Error& e) {
        failure = e.what();
        break;
      }
    }
    if (failure.empty()) {
      try {
        corpus.instances.push_back(normalize_instance(obj, schemas.p_max()));
      } catch (const DegenerateError& e) {
        failure = e.what();
      }
    }
    if (!failure.empty()) corpus.errors.push_back(image_id + ": " + failure);
  }
  corpus.tags.assign(corpus.instances.size(), SplitTag::kUnset);
  if (corpus.skipped_unknown_category > 0) {
    spdlog::warn("load_corpus: skipped {} instance(s) of unconfigured categories",
                 corpus.skipped_unknown_category);
  }
  return corpus;
}

void write_annotations(const std::vector<ObjectInstance>& objects, const SchemaSet& schemas,
                       const fs::path& root) {
  fs::create_directories(root / "masks");
  json entries = json::array();
  for (const auto& obj : objects) {
    const PartSchema& schema = schemas.by_id(obj.category_id);
    json parts = json::object();
    for (const auto& [k, mask] : obj.part_masks) {
      const std::string& part = schema.part_names[static_cast<std::size_t>(k)];
      const std::string rel = "masks/" + obj.image_id + "_" + part + ".png";
      Raster scaled = mask;
      for (auto& v : scaled.pixels) v = v ? 255 : 0;
      write_png_gray(root / rel, scaled);
      parts[part] = rel;
    }
    entries.push_back(
        {{"image_id", obj.image_id}, {"category", schema.category_name}, {"parts", parts}});
  }
  std::ofstream(root / "manifest.json") << json{{"instances", entries}}.dump(1) << "\n";
  schemas.save(root / "schema.json");
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

PrimitiveShape shape_from_string(const std::string& s) {
  if (s == "ellipse") return PrimitiveShape::kEllipse;
  if (s == "rect" || s == "rectangle") return PrimitiveShape::kRectangle;
  throw ConfigError("unknown primitive shape '" + s + "'");
}

struct FracBox {
  double x0, y0, x1, y1;
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  double w() const { return x1 - x0; }
  double h() const { return y1 - y0; }
};

Raster rasterize(const FracBox& b, PrimitiveShape shape, int canvas) {
  Raster r(canvas, canvas);
  const double cx = b.cx(), cy = b.cy(), rx = 0.5 * b.w(), ry = 0.5 * b.h();
  for (int y = 0; y < canvas; ++y) {
    const double py = (y + 0.5) / canvas;
    for (int x = 0; x < canvas; ++x) {
      const double px = (x + 0.5) / canvas;
      bool inside = false;
      if (shape == PrimitiveShape::kRectangle) {
        inside = px >= b.x0 && px <= b.x1 && py >= b.y0 && py <= b.y1;
      } else {
        const double dx = (px - cx) / rx, dy = (py - cy) / ry;
        inside = dx * dx + dy * dy <= 1.0;
      }
      if (inside) r.at(y, x) = 1;
    }
  }
  if (r.empty_foreground()) {
    const int x = std::clamp(static_cast<int>(cx * canvas), 0, canvas - 1);
    const int y = std::clamp(static_cast<int>(cy * canvas), 0, canvas - 1);
    r.at(y, x) = 1;
  }
  return r;
}

}  // namespace

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig cfg;
  cfg.canvas = j.value("canvas", 128);
  if (!j.contains("categories")) throw ConfigError("synthetic config: missing 'categories'");
  for (const auto& c : j["categories"]) {
    CategoryTemplate cat;
    cat.name = c.at("name").get<std::string>();
    cat.instances = c.value("instances", 50);
    for (const auto& p : c.at("parts")) {
      PartTemplate t;
      t.name = p.at("name").get<std::string>();
      t.shape = shape_from_string(p.value("shape", std::string("rect")));
      if (p.contains("size")) {
        t.width = p["size"].at(0).get<double>();
        t.height = p["size"].at(1).get<double>();
      }
      t.size_jitter = p.value("size_jitter", t.size_jitter);
      t.parent = p.value("parent", std::string());
      t.side = p.value("side", t.side);
      t.offset = p.value("offset", t.offset);
      t.offset_jitter = p.value("offset_jitter", t.offset_jitter);
      t.overlap = p.value("overlap", t.overlap);
      t.dropout = p.value("dropout", t.dropout);
      t.paste_priority = p.value("paste_priority", t.paste_priority);
      cat.parts.push_back(std::move(t));
    }
    cfg.categories.push_back(std::move(cat));
  }
  if (cfg.categories.size() < 2) throw ConfigError("synthetic config needs at least two categories");
  return cfg;
}

json SynthConfig::to_json() const {
  json cats = json::array();
  for (const auto& c : categories) {
    json parts = json::array();
    for (const auto& p : c.parts) {
      parts.push_back({{"name", p.name},
                       {"shape", p.shape == PrimitiveShape::kEllipse ? "ellipse" : "rect"},
                       {"size", {p.width, p.height}},
                       {"size_jitter", p.size_jitter},
                       {"parent", p.parent},
                       {"side", p.side},
                       {"offset", p.offset},
                       {"offset_jitter", p.offset_jitter},
                       {"overlap", p.overlap},
                       {"dropout", p.dropout},
                       {"paste_priority", p.paste_priority}});
    }
    cats.push_back({{"name", c.name}, {"instances", c.instances}, {"parts", parts}});
  }
  return {{"canvas", canvas}, {"categories", cats}};
}

SynthConfig SynthConfig::default_config(int instances_per_category) {
  using S = PrimitiveShape;
  SynthConfig cfg;
  CategoryTemplate biped{"biped", instances_per_category, {}};
  biped.parts = {
      {"torso", S::kRectangle, 0.24, 0.34, 0.12, "", "center", 0.0, 0.0, 0.0, 0.0, 10.0},
      {"head", S::kEllipse, 0.17, 0.17, 0.12, "torso", "top", 0.0, 0.08, 0.25, 0.0, 5.0},
      {"arm_l", S::kRectangle, 0.08, 0.28, 0.12, "torso", "left", -0.1, 0.08, 0.35, 0.15, 2.0},
      {"arm_r", S::kRectangle, 0.08, 0.28, 0.12, "torso", "right", -0.1, 0.08, 0.35, 0.15, 2.0},
      {"legs", S::kRectangle, 0.20, 0.28, 0.12, "torso", "bottom", 0.0, 0.05, 0.2, 0.0, 8.0},
      {"tail", S::kEllipse, 0.10, 0.22, 0.15, "torso", "right", 0.35, 0.05, 0.4, 0.5, 1.0},
  };
  CategoryTemplate glider{"glider", instances_per_category, {}};
  glider.parts = {
      {"fuselage", S::kEllipse, 0.16, 0.56, 0.10, "", "center", 0.0, 0.0, 0.0, 0.0, 10.0},
      {"wing_l", S::kRectangle, 0.32, 0.11, 0.12, "fuselage", "left", -0.05, 0.06, 0.3, 0.1, 6.0},
      {"wing_r", S::kRectangle, 0.32, 0.11, 0.12, "fuselage", "right", -0.05, 0.06, 0.3, 0.1, 6.0},
      {"tail", S::kRectangle, 0.26, 0.08, 0.12, "fuselage", "bottom", 0.0, 0.03, 0.6, 0.1, 4.0},
      {"cockpit", S::kEllipse, 0.09, 0.11, 0.12, "fuselage", "top", 0.0, 0.03, 0.9, 0.3, 1.0},
  };
  cfg.categories = {std::move(biped), std::move(glider)};
  return cfg;
}

SchemaSet synth_schemas(const SynthConfig& config) {
  std::vector<PartSchema> cats;
  int id = 1;
  for (const auto& c : config.categories) {
    PartSchema s;
    s.category_id = id++;
    s.category_name = c.name;
    for (const auto& p : c.parts) s.part_names.push_back(p.name);
    std::vector<int> order(c.parts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return c.parts[static_cast<std::size_t>(a)].paste_priority >
             c.parts[static_cast<std::size_t>(b)].paste_priority;
    });
    s.paste_order = order;
    cats.push_back(std::move(s));
  }
  return SchemaSet(std::move(cats));
}

std::vector<ObjectInstance> synth_objects(const SynthConfig& config, std::uint64_t seed) {
  std::vector<ObjectInstance> objects;
  const int canvas = config.canvas;
  for (std::size_t ci = 0; ci < config.categories.size(); ++ci) {
    const auto& cat = config.categories[ci];
    for (int i = 0; i < cat.instances; ++i) {
      Rng rng(derive_seed(seed, ci * 1000003ULL + static_cast<std::uint64_t>(i)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      auto jitter = [&](double range) { return range * (2.0 * unit(rng) - 1.0); };

      std::vector<FracBox> boxes(cat.parts.size());
      std::vector<bool> kept(cat.parts.size(), true);
      for (std::size_t k = 0; k < cat.parts.size(); ++k) {
        const auto& t = cat.parts[k];
        const double w = t.width * (1.0 + jitter(t.size_jitter));
        const double h = t.height * (1.0 + jitter(t.size_jitter));
        const double off = t.offset + jitter(t.offset_jitter);
        kept[k] = !(t.dropout > 0.0 && unit(rng) < t.dropout);
        if (t.parent.empty()) {
          boxes[k] = {0.5 - 0.5 * w, 0.5 - 0.5 * h, 0.5 + 0.5 * w, 0.5 + 0.5 * h};
          continue;
        }
        std::size_t parent = k;
        for (std::size_t q = 0; q < k; ++q) {
          if (cat.parts[q].name == t.parent) parent = q;
        }
        if (parent == k) throw ConfigError("part " + t.name + " names an unknown or later parent");
        const FracBox& P = boxes[parent];
        FracBox b{};
        if (t.side == "top" || t.side == "bottom" || t.side == "center") {
          const double cx = P.cx() + off * P.w();
          b.x0 = cx - 0.5 * w;
          b.x1 = cx + 0.5 * w;
          if (t.side == "top") {
            b.y1 = P.y0 + t.overlap * h;
            b.y0 = b.y1 - h;
          } else if (t.side == "bottom") {
            b.y0 = P.y1 - t.overlap * h;
            b.y1 = b.y0 + h;
          } else {
            b.y0 = P.cy() - 0.5 * h;
            b.y1 = P.cy() + 0.5 * h;
          }
        } else if (t.side == "left" || t.side == "right") {
          const double cy = P.cy() + off * P.h();
          b.y0 = cy - 0.5 * h;
          b.y1 = cy + 0.5 * h;
          if (t.side == "left") {
            b.x1 = P.x0 + t.overlap * w;
            b.x0 = b.x1 - w;
          } else {
            b.x0 = P.x1 - t.overlap * w;
            b.x1 = b.x0 + w;
          }
        } else {
          throw ConfigError("unknown side '" + t.side + "'");
        }
        boxes[k] = b;
      }
      // Fit the object into 90% of the canvas, centred.
      double ux0 = 1e9, uy0 = 1e9, ux1 = -1e9, uy1 = -1e9;
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        if (!kept[k]) continue;
        ux0 = std::min(ux0, boxes[k].x0), uy0 = std::min(uy0, boxes[k].y0);
        ux1 = std::max(ux1, boxes[k].x1), uy1 = std::max(uy1, boxes[k].y1);
      }
      const double extent = std::max(ux1 - ux0, uy1 - uy0);
      const double fit = extent > 0.9 ? 0.9 / extent : 1.0;
      const double ucx = 0.5 * (ux0 + ux1), ucy = 0.5 * (uy0 + uy1);

      ObjectInstance obj;
      obj.image_id = cat.name + "_" + std::to_string(i);
      obj.category_id = static_cast<int>(ci) + 1;
      obj.height = canvas;
      obj.width = canvas;
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        if (!kept[k]) continue;
        const FracBox& b = boxes[k];
        const FracBox placed{0.5 + (b.x0 - ucx) * fit, 0.5 + (b.y0 - ucy) * fit,
                             0.5 + (b.x1 - ucx) * fit, 0.5 + (b.y1 - ucy) * fit};
        obj.part_masks.emplace(static_cast<int>(k), rasterize(placed, cat.parts[k].shape, canvas));
      }
      objects.push_back(std::move(obj));
    }
  }
  return objects;
}

Corpus synth_generate(const SynthConfig& config, std::uint64_t seed) {
  Corpus corpus;
  corpus.schemas = synth_schemas(config);
  for (const auto& obj : synth_objects(config, seed)) {
    corpus.instances.push_back(normalize_instance(obj, corpus.schemas.p_max()));
  }
  corpus.tags.assign(corpus.instances.size(), SplitTag::kUnset);
  return corpus;
}

}  // namespace opal::dataset
