// SPDX-License-Identifier: Apache-2.0
#include "opal/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "opal/checkpoint.hpp"
#include "opal/error.hpp"
#include "opal/training.hpp"

namespace opal::pipeline {

using json = nlohmann::json;
using Index = Eigen::Index;
using ad::Matrix;

namespace {

int parse_part(const json& j, const dataset::PartSchema& schema) {
  int k = -1;
  if (j.is_string()) {
    k = schema.part_index(j.get<std::string>());
    if (k < 0) {
      throw ValidationError("unknown part '" + j.get<std::string>() + "' for category " +
                            schema.category_name);
    }
  } else if (j.is_number_integer()) {
    k = j.get<int>();
  } else {
    throw ValidationError("part must be a name or an index");
  }
  if (k < 0 || k >= schema.part_count()) {
    throw ValidationError("part index " + std::to_string(k) + " outside category " + schema.category_name);
  }
  return k;
}

const std::string& part_name(const dataset::PartSchema& schema, int k) {
  return schema.part_names.at(static_cast<std::size_t>(k));
}

dataset::PartGraph graph_of(int category_id, const std::map<int, Box>& boxes,
                            const dataset::SchemaSet& schemas) {
  dataset::NormalizedInstance inst;
  inst.category_id = category_id;
  inst.part_boxes = boxes;
  inst.presence.assign(static_cast<std::size_t>(schemas.p_max()), 0);
  for (const auto& [k, b] : boxes) inst.presence[static_cast<std::size_t>(k)] = 1;
  return dataset::build_part_graph(inst, schemas.by_id(category_id), dataset::dilated_overlap_rule());
}

LayoutResult compose(dataset::PartGraph graph, labelmap::PartMaskSet masks, std::vector<std::string> notices,
                     const dataset::SchemaSet& schemas) {
  LayoutResult r;
  std::map<int, Box> boxes;
  for (int k = 0; k < graph.p_max(); ++k) {
    if (graph.presence[static_cast<std::size_t>(k)]) boxes[k] = graph.box(k);
  }
  r.layout = labelmap::compose_layout(masks, boxes, schemas.by_id(graph.category_id).effective_paste_order(),
                                      graph.category_id);
  r.graph = std::move(graph);
  r.masks = std::move(masks);
  r.notices = std::move(notices);
  return r;
}

void require_compatible(const ModelBundle& models, int category_id) {
  const auto& s = models.schemas();
  s.by_id(category_id);
  if (models.box_model().dims().p_max != s.p_max() || models.mask_model().dims().p_max != s.p_max()) {
    throw CheckpointError("checkpoint part count does not match the schema");
  }
}

}  // namespace

std::vector<std::uint8_t> GenerationRequest::presence(int p_max) const {
  std::vector<std::uint8_t> l(static_cast<std::size_t>(p_max), 0);
  for (int k : parts) {
    require(k >= 0 && k < p_max, "requested part outside p_max");
    l[static_cast<std::size_t>(k)] = 1;
  }
  return l;
}

GenerationRequest GenerationRequest::from_json(const json& j, const dataset::SchemaSet& schemas) {
  if (!j.is_object()) throw ValidationError("generation request must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "category" && key != "parts" && key != "seed" && key != "fixed_boxes") {
      throw ValidationError("unknown request field '" + key + "'");
    }
  }
  if (!j.contains("category")) throw ValidationError("request needs a category");
  GenerationRequest req;
  const json& c = j.at("category");
  if (c.is_string()) {
    const dataset::PartSchema* s = schemas.find_by_name(c.get<std::string>());
    if (!s) throw ValidationError("unknown category '" + c.get<std::string>() + "'");
    req.category_id = s->category_id;
  } else if (c.is_number_integer()) {
    req.category_id = c.get<int>();
  } else {
    throw ValidationError("category must be a name or an id");
  }
  const dataset::PartSchema& schema = schemas.by_id(req.category_id);
  if (j.contains("parts")) {
    if (!j.at("parts").is_array()) throw ValidationError("parts must be an array");
    for (const json& p : j.at("parts")) req.parts.push_back(parse_part(p, schema));
  }
  std::sort(req.parts.begin(), req.parts.end());
  req.parts.erase(std::unique(req.parts.begin(), req.parts.end()), req.parts.end());
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer()) {
      throw ValidationError("seed must be a nonnegative integer");
    }
    if (j.at("seed").is_number_integer() && j.at("seed").get<long long>() < 0) {
      throw ValidationError("seed must be a nonnegative integer");
    }
    req.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("fixed_boxes")) {
    if (!j.at("fixed_boxes").is_object()) throw ValidationError("fixed_boxes must map part names to boxes");
    for (const auto& [name, box] : j.at("fixed_boxes").items()) {
      const int k = parse_part(json(name), schema);
      const Box b = dataset::box_from_json(box);
      if (auto why = box_problem(b)) throw ValidationError(name + ": " + *why);
      req.fixed_boxes[k] = b;
    }
  }
  return req;
}

json GenerationRequest::to_json(const dataset::SchemaSet& schemas) const {
  const dataset::PartSchema& schema = schemas.by_id(category_id);
  json parts_json = json::array();
  for (int k : parts) parts_json.push_back(part_name(schema, k));
  json j = {{"category", schema.category_name}, {"parts", parts_json}, {"seed", seed}};
  if (!fixed_boxes.empty()) {
    json fixed = json::object();
    for (const auto& [k, b] : fixed_boxes) fixed[part_name(schema, k)] = dataset::to_json(b);
    j["fixed_boxes"] = fixed;
  }
  return j;
}

EditCommand EditCommand::from_json(const json& j, const dataset::PartSchema& schema) {
  if (!j.is_object()) throw ValidationError("edit must be a JSON object");
  EditCommand e;
  const std::string op = j.value("op", std::string("move"));
  if (op == "move") {
    e.op = Op::kMove;
  } else if (op == "add") {
    e.op = Op::kAdd;
  } else if (op == "remove") {
    e.op = Op::kRemove;
  } else {
    throw ValidationError("unknown edit op '" + op + "'");
  }
  if (!j.contains("part")) throw ValidationError("edit needs a part");
  e.part_index = parse_part(j.at("part"), schema);
  if (e.op != Op::kRemove) {
    if (!j.contains("box")) throw ValidationError("'" + op + "' edit needs a box");
    e.box = dataset::box_from_json(j.at("box"));
  }
  return e;
}

json EditCommand::to_json(const dataset::PartSchema& schema) const {
  static constexpr const char* kOps[] = {"move", "add", "remove"};
  json j = {{"op", kOps[static_cast<int>(op)]}, {"part", part_name(schema, part_index)}};
  if (op != Op::kRemove) j["box"] = dataset::to_json(box);
  return j;
}

ModelBundle::ModelBundle(dataset::SchemaSet schemas, std::shared_ptr<const boxvae::BoxVae> boxes,
                         std::shared_ptr<const labelmap::LabelMapVae> masks)
    : schemas_(std::move(schemas)), boxes_(std::move(boxes)), masks_(std::move(masks)) {
  require(boxes_ && masks_, "ModelBundle needs both models");
  if (boxes_->dims().p_max != schemas_.p_max() || masks_->dims().p_max != schemas_.p_max() ||
      boxes_->dims().num_categories != schemas_.num_categories() ||
      masks_->dims().num_categories != schemas_.num_categories()) {
    throw CheckpointError("model dimensions do not match the schema");
  }
}

ModelBundle ModelBundle::load(const std::filesystem::path& box_checkpoint,
                              const std::filesystem::path& mask_checkpoint) {
  const json box_meta = checkpoint::read_sidecar(box_checkpoint);
  const json mask_meta = checkpoint::read_sidecar(mask_checkpoint);
  auto kind_of = [](const json& meta) { return meta.value("kind", std::string()); };
  if (kind_of(box_meta) != "boxvae") throw CheckpointError(box_checkpoint.string() + " is not a boxvae checkpoint");
  if (kind_of(mask_meta) != "labelmapvae") {
    throw CheckpointError(mask_checkpoint.string() + " is not a labelmapvae checkpoint");
  }
  if (!box_meta.contains("schema_hash") || !mask_meta.contains("schema_hash")) {
    throw CheckpointError("checkpoint sidecar carries no schema");
  }
  if (box_meta.at("schema_hash") != mask_meta.at("schema_hash")) {
    throw CheckpointError("box and mask checkpoints were trained on different schemas");
  }
  try {
    dataset::SchemaSet schemas = dataset::SchemaSet::from_json(box_meta.at("schema"));
    auto boxes = std::make_shared<boxvae::BoxVae>(
        boxvae::BoxVaeDims::from_json(box_meta.at("model").at("dims")), 0);
    auto masks = std::make_shared<labelmap::LabelMapVae>(
        labelmap::LabelMapDims::from_json(mask_meta.at("model").at("dims")), 0);
    checkpoint::load_into(box_checkpoint, boxes->parameters());
    checkpoint::load_into(mask_checkpoint, masks->parameters());
    return ModelBundle(std::move(schemas), std::move(boxes), std::move(masks));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint sidecar: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("malformed checkpoint sidecar: ") + e.what());
  }
}

std::map<int, Box> LayoutResult::boxes() const {
  std::map<int, Box> out;
  for (int k = 0; k < graph.p_max(); ++k) {
    if (graph.presence[static_cast<std::size_t>(k)]) out[k] = graph.box(k);
  }
  return out;
}

json LayoutResult::summary(const dataset::SchemaSet& schemas) const {
  const dataset::PartSchema& schema = schemas.by_id(graph.category_id);
  json j = layout.sidecar(schema);
  json parts = json::array();
  json box_json = json::object();
  for (const auto& [k, b] : boxes()) {
    parts.push_back(part_name(schema, k));
    box_json[part_name(schema, k)] = dataset::to_json(b);
  }
  json drawn = json::array();
  for (int k : layout.parts_drawn()) drawn.push_back(part_name(schema, k));
  j["parts"] = parts;
  j["boxes"] = box_json;
  j["drawn"] = drawn;
  j["notices"] = notices;
  return j;
}

std::optional<std::string> box_problem(const Box& b) {
  if (!std::isfinite(b.x_min) || !std::isfinite(b.y_min) || !std::isfinite(b.x_max) || !std::isfinite(b.y_max)) {
    return "box has non-finite coordinates";
  }
  if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) return "box needs x_min < x_max and y_min < y_max";
  if (b.x_max <= -1.0 || b.x_min >= 1.0 || b.y_max <= -1.0 || b.y_min >= 1.0) {
    return "box lies entirely outside the canvas";
  }
  return std::nullopt;
}

LayoutResult generate_layout(const GenerationRequest& req, const ModelBundle& models) {
  require_compatible(models, req.category_id);
  const dataset::SchemaSet& schemas = models.schemas();
  const dataset::PartSchema& schema = schemas.by_id(req.category_id);
  const int p = schemas.p_max();
  for (int k : req.parts) {
    if (k < 0 || k >= schema.part_count()) throw ValidationError("requested part outside the category");
  }
  for (const auto& [k, b] : req.fixed_boxes) {
    if (!std::binary_search(req.parts.begin(), req.parts.end(), k)) {
      throw ValidationError("fixed box for unrequested part " + part_name(schema, k));
    }
    if (auto why = box_problem(b)) throw ValidationError(*why);
  }

  ad::NoGradGuard guard;
  const std::vector<std::uint8_t> presence = req.presence(p);
  Rng box_rng(derive_seed(req.seed, 0));
  const Matrix z = standard_normal(1, models.box_model().dims().latent, box_rng);
  const boxvae::BoxDecodeOutput decoded = models.box_model().decode_output(z, {req.category_id, presence});

  std::vector<std::string> notices;
  std::map<int, Box> boxes;
  for (int k : req.parts) {
    const double prob = decoded.presence_probs(0, k);
    if (prob < 0.5) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "part %s forced present (decoded presence %.3f)",
                    part_name(schema, k).c_str(), prob);
      notices.emplace_back(buf);
      spdlog::debug("{}", buf);
    }
    const auto fixed = req.fixed_boxes.find(k);
    boxes[k] = fixed != req.fixed_boxes.end()
                   ? fixed->second
                   : training::canonical_box(decoded.boxes(k, 0), decoded.boxes(k, 1), decoded.boxes(k, 2),
                                             decoded.boxes(k, 3));
  }

  dataset::PartGraph graph;
  graph.category_id = req.category_id;
  graph.presence = presence;
  graph.features = Matrix::Zero(p, 5);
  graph.adjacency = Matrix::Zero(p, p);
  for (const auto& [k, b] : boxes) graph.features.row(k) << 1.0, b.x_min, b.y_min, b.x_max, b.y_max;
  for (int m : req.parts) {
    for (int n : req.parts) {
      if (m != n && decoded.adjacency_probs(m, n) >= 0.5) graph.adjacency(m, n) = 1.0;
    }
  }

  Rng mask_rng(derive_seed(req.seed, 1));
  const Matrix z_mask = standard_normal(1, models.mask_model().dims().latent, mask_rng);
  labelmap::PartMaskSet masks = models.mask_model().decode_masks(z_mask, labelmap::BoxCondition::of(graph));
  return compose(std::move(graph), std::move(masks), std::move(notices), schemas);
}

LayoutResult edit_and_regenerate(const std::map<int, Box>& boxes, const std::vector<EditCommand>& edits,
                                 const GenerationRequest& req, const ModelBundle& models) {
  require_compatible(models, req.category_id);
  const dataset::SchemaSet& schemas = models.schemas();
  const dataset::PartSchema& schema = schemas.by_id(req.category_id);
  std::map<int, Box> edited = boxes;
  for (const auto& [k, b] : edited) {
    if (k < 0 || k >= schema.part_count()) throw ValidationError("box for a part outside the category");
  }
  for (const EditCommand& e : edits) {
    if (e.part_index < 0 || e.part_index >= schema.part_count()) {
      throw ValidationError("edit names a part outside the category");
    }
    const std::string& name = part_name(schema, e.part_index);
    const bool present = edited.count(e.part_index) > 0;
    switch (e.op) {
      case EditCommand::Op::kMove:
        if (!present) throw ValidationError("cannot move absent part " + name);
        if (auto why = box_problem(e.box)) throw ValidationError(name + ": " + *why);
        edited[e.part_index] = e.box;
        break;
      case EditCommand::Op::kAdd:
        if (present) throw ValidationError("part " + name + " is already present");
        if (auto why = box_problem(e.box)) throw ValidationError(name + ": " + *why);
        edited[e.part_index] = e.box;
        break;
      case EditCommand::Op::kRemove:
        if (!present) throw ValidationError("cannot remove absent part " + name);
        edited.erase(e.part_index);
        break;
    }
  }

  ad::NoGradGuard guard;
  dataset::PartGraph graph = graph_of(req.category_id, edited, schemas);
  Rng mask_rng(derive_seed(req.seed, 1));
  const Matrix z_mask = standard_normal(1, models.mask_model().dims().latent, mask_rng);
  labelmap::PartMaskSet masks = models.mask_model().decode_masks(z_mask, labelmap::BoxCondition::of(graph));
  return compose(std::move(graph), std::move(masks), {}, schemas);
}

LayoutResult add_part(const LayoutResult& original, int part_index, const ModelBundle& models,
                      std::uint64_t seed) {
  const int c = original.graph.category_id;
  require_compatible(models, c);
  const dataset::SchemaSet& schemas = models.schemas();
  const dataset::PartSchema& schema = schemas.by_id(c);
  if (part_index < 0 || part_index >= schema.part_count()) {
    throw ValidationError("part index outside category " + schema.category_name);
  }
  const std::string& name = part_name(schema, part_index);
  if (original.graph.presence[static_cast<std::size_t>(part_index)]) {
    LayoutResult same = original;
    same.notices.push_back("part " + name + " is already present; nothing added");
    return same;
  }

  ad::NoGradGuard guard;
  std::vector<std::uint8_t> augmented = original.graph.presence;
  augmented[static_cast<std::size_t>(part_index)] = 1;

  const GaussianParams q_box = models.box_model().encode_params(original.graph);
  const Matrix z_d = reparameterize(q_box, derive_seed(seed, 0));
  const boxvae::BoxDecodeOutput decoded = models.box_model().decode_output(z_d, {c, augmented});
  std::map<int, Box> boxes = original.boxes();
  boxes[part_index] = training::canonical_box(decoded.boxes(part_index, 0), decoded.boxes(part_index, 1),
                                              decoded.boxes(part_index, 2), decoded.boxes(part_index, 3));
  dataset::PartGraph graph = graph_of(c, boxes, schemas);

  const GaussianParams q_mask =
      models.mask_model().encode_params(original.masks, labelmap::BoxCondition::of(original.graph));
  const Matrix z_mask = reparameterize(q_mask, derive_seed(seed, 1));
  const labelmap::PartMaskSet fresh = models.mask_model().decode_masks(z_mask, labelmap::BoxCondition::of(graph));
  labelmap::PartMaskSet masks = original.masks;
  masks.masks.row(part_index) = fresh.masks.row(part_index);
  masks.presence = augmented;

  std::vector<std::string> notices = original.notices;
  notices.push_back("added part " + name);
  return compose(std::move(graph), std::move(masks), std::move(notices), schemas);
}

LayoutResult layout_of(const dataset::NormalizedInstance& inst, const ModelBundle& models) {
  require_compatible(models, inst.category_id);
  const dataset::SchemaSet& schemas = models.schemas();
  dataset::PartGraph graph =
      dataset::build_part_graph(inst, schemas.by_id(inst.category_id), dataset::dilated_overlap_rule());
  return compose(std::move(graph), labelmap::mask_set(inst, schemas.p_max()), {}, schemas);
}

LayoutResult add_part(const dataset::NormalizedInstance& inst, int part_index, const ModelBundle& models,
                      std::uint64_t seed) {
  return add_part(layout_of(inst, models), part_index, models, seed);
}

double GenerationStats::requested_present_rate() const {
  return requested_parts ? static_cast<double>(requested_drawn) / static_cast<double>(requested_parts) : 1.0;
}

double GenerationStats::containment_rate() const {
  return generations ? static_cast<double>(containment_ok) / static_cast<double>(generations) : 1.0;
}

json GenerationStats::to_json() const {
  return {{"generations", generations},
          {"requested_parts", requested_parts},
          {"requested_drawn", requested_drawn},
          {"requested_present_rate", requested_present_rate()},
          {"containment_rate", containment_rate()}};
}

GenerationStats generation_stats(const std::vector<GenerationRequest>& requests, const ModelBundle& models) {
  GenerationStats stats;
  for (const GenerationRequest& req : requests) {
    const LayoutResult r = generate_layout(req, models);
    const std::vector<int> drawn = r.layout.parts_drawn();
    ++stats.generations;
    stats.requested_parts += req.parts.size();
    for (int k : req.parts) {
      if (std::find(drawn.begin(), drawn.end(), k) != drawn.end()) ++stats.requested_drawn;
    }
    if (r.layout.satisfies_containment()) ++stats.containment_ok;
  }
  return stats;
}

}  // namespace opal::pipeline
