// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "opal/baselines.hpp"
#include "opal/checkpoint.hpp"
#include "opal/dataset.hpp"
#include "opal/error.hpp"
#include "opal/pipeline.hpp"
#include "opal/service.hpp"
#include "opal/training.hpp"

namespace opal::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json yaml_node_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& item : node) a.push_back(yaml_node_to_json(item));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : node) o[kv.first.as<std::string>()] = yaml_node_to_json(kv.second);
      return o;
    }
    case YAML::NodeType::Scalar:
      break;
  }
  const std::string text = node.Scalar();
  // quoted scalars carry the "!" tag and stay strings
  if (node.Tag() == "!") return text;
  if (text == "true" || text == "True") return true;
  if (text == "false" || text == "False") return false;
  if (text == "null" || text == "~") return nullptr;
  json number = json::parse(text, nullptr, false);
  if (!number.is_discarded() && number.is_number()) return number;
  return text;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Options shared by the commands that load trained models.
struct ModelPaths {
  std::string dir;
  std::string box_checkpoint;
  std::string mask_checkpoint;

  void add_to(CLI::App* app) {
    app->add_option("--models", dir, "Directory holding boxvae_best.bin and labelmapvae_best.bin");
    app->add_option("--box-checkpoint", box_checkpoint, "BoxVAE checkpoint (overrides --models)");
    app->add_option("--mask-checkpoint", mask_checkpoint, "LabelMapVAE checkpoint (overrides --models)");
  }

  pipeline::ModelBundle load() const {
    fs::path box = box_checkpoint, mask = mask_checkpoint;
    if (box.empty()) box = fs::path(dir) / "boxvae_best.bin";
    if (mask.empty()) mask = fs::path(dir) / "labelmapvae_best.bin";
    if (dir.empty() && (box_checkpoint.empty() || mask_checkpoint.empty())) {
      throw ValidationError("pass --models or both --box-checkpoint and --mask-checkpoint");
    }
    return pipeline::ModelBundle::load(box, mask);
  }
};

dataset::Corpus load_split_corpus(const fs::path& root, std::uint64_t seed) {
  const fs::path schema_path = root / "schema.json";
  if (!fs::exists(schema_path)) throw ConfigError("no schema.json under " + root.string());
  const dataset::SchemaSet schemas = dataset::SchemaSet::load(schema_path);
  dataset::Corpus corpus = dataset::load_corpus(root, schemas);
  for (const std::string& e : corpus.errors) spdlog::warn("{}", e);
  if (corpus.instances.empty()) throw ValidationError("corpus " + root.string() + " has no usable instances");
  return dataset::split_corpus(std::move(corpus), seed);
}

/// Writes `<stem>.png` and `<stem>.json`; the sidecar embeds the request so
/// that `edit` and `addpart` can resume from it.
json save_layout(const pipeline::LayoutResult& r, const pipeline::GenerationRequest& req,
                 const dataset::SchemaSet& schemas, const fs::path& stem) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  r.layout.save(stem, schemas.by_id(r.graph.category_id));
  json j = r.summary(schemas);
  j["request"] = req.to_json(schemas);
  write_text(fs::path(stem.string() + ".json"), j.dump(2) + "\n");
  return j;
}

struct PriorLayout {
  pipeline::GenerationRequest request;
  std::map<int, dataset::Box> boxes;
};

PriorLayout read_prior_layout(const fs::path& path, const dataset::SchemaSet& schemas) {
  const json j = load_document(path);
  if (!j.contains("request") || !j.contains("boxes")) {
    throw ValidationError(path.string() + " is not a layout sidecar written by generate or edit");
  }
  PriorLayout prior;
  prior.request = pipeline::GenerationRequest::from_json(j.at("request"), schemas);
  prior.request.fixed_boxes.clear();
  const dataset::PartSchema& schema = schemas.by_id(prior.request.category_id);
  for (const auto& [name, box] : j.at("boxes").items()) {
    const int k = schema.part_index(name);
    if (k < 0) throw ValidationError("unknown part '" + name + "' in " + path.string());
    prior.boxes[k] = dataset::box_from_json(box);
  }
  prior.request.parts.clear();
  for (const auto& [k, b] : prior.boxes) prior.request.parts.push_back(k);
  return prior;
}

std::vector<std::size_t> indices_for(const dataset::Corpus& corpus, const std::string& split) {
  if (split == "train") return corpus.indices(dataset::SplitTag::kTrain);
  if (split == "val") return corpus.indices(dataset::SplitTag::kVal);
  if (split == "test") return corpus.indices(dataset::SplitTag::kTest);
  if (split == "all") {
    std::vector<std::size_t> all(corpus.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  throw ValidationError("unknown split '" + split + "'");
}

// --- commands -------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
  int instances = 0;
};

int cmd_synth(const SynthArgs& a, std::uint64_t seed, std::ostream& out) {
  dataset::SynthConfig config = a.config.empty() ? dataset::SynthConfig::default_config()
                                                 : dataset::SynthConfig::from_json(load_document(a.config));
  if (a.instances > 0) {
    for (auto& c : config.categories) c.instances = a.instances;
  }
  const dataset::SchemaSet schemas = dataset::synth_schemas(config);
  const auto objects = dataset::synth_objects(config, seed);
  dataset::write_annotations(objects, schemas, a.out);
  out << json{{"out", a.out}, {"instances", objects.size()}, {"categories", schemas.num_categories()},
              {"p_max", schemas.p_max()}}
             .dump()
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string stage;
  std::string corpus;
  std::string config;
  std::string out;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  std::optional<double> clip_norm;
};

int cmd_train(const TrainArgs& a, std::optional<std::uint64_t> seed_flag, std::ostream& out) {
  const training::Stage stage = training::stage_from_string(a.stage);
  json config_doc = a.config.empty() ? json::object() : load_document(a.config);
  if (!config_doc.is_object()) throw ConfigError("train config must be a mapping");
  baselines::GumbelConfig gumbel;
  if (config_doc.contains("gumbel")) {
    const json g = config_doc.at("gumbel");
    gumbel.tau = g.value("tau", gumbel.tau);
    gumbel.decay = g.value("decay", gumbel.decay);
    gumbel.tau_min = g.value("tau_min", gumbel.tau_min);
    config_doc.erase("gumbel");
  }
  training::TrainConfig config = training::TrainConfig::from_json(config_doc, stage);
  if (a.epochs) config.epochs = *a.epochs;
  if (a.learning_rate) config.learning_rate = *a.learning_rate;
  if (a.batch_size) config.batch_size = *a.batch_size;
  if (a.clip_norm) config.clip_norm = *a.clip_norm;
  if (seed_flag) config.seed = *seed_flag;
  if (!a.out.empty()) config.output_dir = a.out;
  if (config.learning_rate <= 0 || config.epochs < 1 || config.batch_size < 1) {
    throw ValidationError("learning rate, epochs and batch size must be positive");
  }

  const dataset::Corpus corpus = load_split_corpus(a.corpus, config.seed);
  const dataset::SchemaSet& s = corpus.schemas;
  const auto train = corpus.indices(dataset::SplitTag::kTrain);
  const auto val = corpus.indices(dataset::SplitTag::kVal);
  const json extra = training::schema_sidecar(s);
  const std::uint64_t model_seed = derive_seed(config.seed, 0x30de1);
  auto graphs = training::part_graphs(corpus);

  json summary = {{"stage", training::to_string(stage)}, {"train", train.size()}, {"val", val.size()},
                  {"output_dir", config.output_dir.string()}};
  auto report = [&](const training::TrainResult& r) {
    summary["best_checkpoint"] = r.best_checkpoint.string();
    summary["last_checkpoint"] = r.last_checkpoint.string();
    summary["metrics_log"] = r.metrics_log.string();
    summary["best_val_recon"] = r.best_val;
    summary["final"] = r.metrics.back().to_json();
  };

  switch (stage) {
    case training::Stage::kBoxVae: {
      boxvae::BoxVae model({s.p_max(), s.num_categories()}, model_seed);
      training::BoxVaeObjective objective(model, std::move(graphs));
      report(training::train_stage(objective, train, val, config, extra));
      break;
    }
    case training::Stage::kLabelMapVae: {
      labelmap::LabelMapVae model({s.p_max(), s.num_categories()}, model_seed);
      training::LabelMapVaeObjective objective(model, std::move(graphs), training::part_masks(corpus));
      report(training::train_stage(objective, train, val, config, extra));
      break;
    }
    case training::Stage::kBmVae: {
      baselines::BmVae model({s.p_max(), s.num_categories()}, {s.p_max(), s.num_categories()}, model_seed);
      baselines::BmVaeObjective objective(model, std::move(graphs), training::part_masks(corpus));
      report(training::train_stage(objective, train, val, config, extra));
      break;
    }
    case training::Stage::kBsLstm: {
      baselines::BsLstm model({s.p_max(), s.num_categories()}, model_seed);
      baselines::BsLstmObjective objective(model, std::move(graphs), training::part_masks(corpus));
      report(training::train_stage(objective, train, val, config, extra));
      break;
    }
    case training::Stage::kCgGan: {
      baselines::CgGan model({s.p_max(), s.num_categories()}, model_seed);
      std::vector<baselines::GanSample> samples;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& inst = corpus.instances[i];
        samples.push_back({baselines::real_label_map(inst, s.by_id(inst.category_id), s.p_max(), model.dims().canvas),
                           model.condition_row(inst.category_id, inst.presence)});
      }
      const auto r = baselines::train_cggan(model, samples, train, config, gumbel, extra);
      summary["last_checkpoint"] = r.checkpoint.string();
      summary["metrics_log"] = r.metrics_log.string();
      summary["final"] = r.metrics.back().to_json();
      break;
    }
  }
  out << summary.dump() << "\n";
  return kExitOk;
}

struct GenerateArgs {
  ModelPaths models;
  std::string request;
  std::string category;
  std::string parts;
  std::string out = "layout";
};

int cmd_generate(const GenerateArgs& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const pipeline::ModelBundle models = a.models.load();
  json req_doc = a.request.empty() ? json::object() : load_document(a.request);
  if (!a.category.empty()) {
    const bool numeric = std::all_of(a.category.begin(), a.category.end(), ::isdigit);
    req_doc["category"] = numeric ? json(std::stoi(a.category)) : json(a.category);
  }
  if (!a.parts.empty()) req_doc["parts"] = split_list(a.parts);
  if (seed) req_doc["seed"] = *seed;
  const pipeline::GenerationRequest req = pipeline::GenerationRequest::from_json(req_doc, models.schemas());
  const pipeline::LayoutResult r = pipeline::generate_layout(req, models);
  out << save_layout(r, req, models.schemas(), a.out).dump() << "\n";
  return kExitOk;
}

struct EditArgs {
  ModelPaths models;
  std::string layout;
  std::string edits;
  std::vector<std::string> moves;
  std::vector<std::string> adds;
  std::vector<std::string> removes;
  std::string out = "layout_edited";
};

pipeline::EditCommand parse_inline_edit(const std::string& spec, const std::string& op,
                                        const dataset::PartSchema& schema) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ValidationError("expected part=x0,y0,x1,y1, got '" + spec + "'");
  const auto coords = split_list(spec.substr(eq + 1));
  if (coords.size() != 4) throw ValidationError("box needs four coordinates: '" + spec + "'");
  json box = json::array();
  for (const auto& c : coords) {
    try {
      box.push_back(std::stod(c));
    } catch (const std::exception&) {
      throw ValidationError("bad coordinate '" + c + "'");
    }
  }
  return pipeline::EditCommand::from_json({{"op", op}, {"part", spec.substr(0, eq)}, {"box", box}}, schema);
}

int cmd_edit(const EditArgs& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const pipeline::ModelBundle models = a.models.load();
  PriorLayout prior = read_prior_layout(a.layout, models.schemas());
  const dataset::PartSchema& schema = models.schemas().by_id(prior.request.category_id);
  std::vector<pipeline::EditCommand> edits;
  if (!a.edits.empty()) {
    const json doc = load_document(a.edits);
    const json& list = doc.is_object() && doc.contains("edits") ? doc.at("edits") : doc;
    if (!list.is_array()) throw ValidationError("edits file must hold a list of edits");
    for (const json& e : list) edits.push_back(pipeline::EditCommand::from_json(e, schema));
  }
  for (const auto& m : a.moves) edits.push_back(parse_inline_edit(m, "move", schema));
  for (const auto& m : a.adds) edits.push_back(parse_inline_edit(m, "add", schema));
  for (const auto& m : a.removes) {
    edits.push_back(pipeline::EditCommand::from_json({{"op", "remove"}, {"part", m}}, schema));
  }
  if (seed) prior.request.seed = *seed;
  const pipeline::LayoutResult r = pipeline::edit_and_regenerate(prior.boxes, edits, prior.request, models);
  pipeline::GenerationRequest next = prior.request;
  next.parts.clear();
  for (const auto& [k, b] : r.boxes()) next.parts.push_back(k);
  out << save_layout(r, next, models.schemas(), a.out).dump() << "\n";
  return kExitOk;
}

struct AddPartArgs {
  ModelPaths models;
  std::string layout;
  std::string corpus;
  std::string instance;
  std::string part;
  std::string out = "layout_added";
};

int cmd_addpart(const AddPartArgs& a, std::optional<std::uint64_t> seed_flag, std::ostream& out) {
  const pipeline::ModelBundle models = a.models.load();
  const dataset::SchemaSet& schemas = models.schemas();
  pipeline::LayoutResult original;
  pipeline::GenerationRequest req;
  if (!a.layout.empty()) {
    const PriorLayout prior = read_prior_layout(a.layout, schemas);
    req = prior.request;
    original = pipeline::edit_and_regenerate(prior.boxes, {}, req, models);
  } else if (!a.corpus.empty() && !a.instance.empty()) {
    const dataset::Corpus corpus = dataset::load_corpus(a.corpus, dataset::SchemaSet::load(fs::path(a.corpus) / "schema.json"));
    const auto it = std::find_if(corpus.instances.begin(), corpus.instances.end(),
                                 [&](const dataset::NormalizedInstance& i) { return i.id == a.instance; });
    if (it == corpus.instances.end()) throw ValidationError("no instance '" + a.instance + "' in the corpus");
    original = pipeline::layout_of(*it, models);
    req.category_id = it->category_id;
  } else {
    throw ValidationError("pass --layout, or --corpus with --instance");
  }
  const dataset::PartSchema& schema = schemas.by_id(original.graph.category_id);
  const int k = schema.part_index(a.part);
  if (k < 0) throw ValidationError("unknown part '" + a.part + "' for category " + schema.category_name);
  const std::uint64_t seed = seed_flag.value_or(req.seed);
  const pipeline::LayoutResult r = pipeline::add_part(original, k, models, seed);
  req.seed = seed;
  req.parts.clear();
  for (const auto& [part, b] : r.boxes()) req.parts.push_back(part);
  out << save_layout(r, req, schemas, a.out).dump() << "\n";
  return kExitOk;
}

struct EvalArgs {
  ModelPaths models;
  std::string corpus;
  std::string split = "test";
  int generations = 100;
};

int cmd_eval(const EvalArgs& a, std::uint64_t seed, std::ostream& out) {
  const pipeline::ModelBundle models = a.models.load();
  const dataset::Corpus corpus = load_split_corpus(a.corpus, seed);
  if (corpus.schemas.hash() != models.schemas().hash()) {
    throw ValidationError("corpus schema differs from the checkpoint schema");
  }
  const auto idx = indices_for(corpus, a.split);
  if (idx.empty()) throw ValidationError("split '" + a.split + "' is empty");
  const auto all_graphs = training::part_graphs(corpus);
  const auto all_masks = training::part_masks(corpus);
  std::vector<dataset::PartGraph> graphs;
  std::vector<labelmap::PartMaskSet> masks;
  for (std::size_t i : idx) {
    graphs.push_back(all_graphs[i]);
    masks.push_back(all_masks[i]);
  }
  const auto boxes = training::evaluate_box_reconstruction(models.box_model(), graphs, models.schemas(), seed);
  const double mask_recon = training::evaluate_mask_reconstruction(models.mask_model(), graphs, masks, seed);

  std::vector<pipeline::GenerationRequest> requests;
  for (int n = 0; n < a.generations; ++n) {
    const dataset::PartGraph& g = graphs[static_cast<std::size_t>(n) % graphs.size()];
    pipeline::GenerationRequest r;
    r.category_id = g.category_id;
    for (int k = 0; k < g.p_max(); ++k) {
      if (g.presence[static_cast<std::size_t>(k)]) r.parts.push_back(k);
    }
    r.seed = derive_seed(seed, 0xe7a1 + static_cast<std::uint64_t>(n));
    requests.push_back(std::move(r));
  }
  const pipeline::GenerationStats stats = pipeline::generation_stats(requests, models);
  out << json{{"split", a.split},
              {"instances", idx.size()},
              {"box", {{"presence_accuracy", boxes.presence_accuracy},
                       {"mean_iou", boxes.mean_iou},
                       {"mean_recon", boxes.mean_recon}}},
              {"mask", {{"mean_recon", mask_recon}}},
              {"generation", stats.to_json()}}
             .dump()
      << "\n";
  return kExitOk;
}

struct ServeArgs {
  ModelPaths models;
  service::ServiceOptions options;
};

int cmd_serve(ServeArgs a, std::uint64_t seed) {
  auto models = std::make_shared<const pipeline::ModelBundle>(a.models.load());
  a.options.session_salt = seed;
  service::LayoutService svc(models, a.options);
  if (!svc.listen()) throw Error("cannot listen on " + a.options.host + ":" + std::to_string(a.options.port));
  return kExitOk;
}

}  // namespace

json yaml_to_json(const std::string& text) {
  try {
    return yaml_node_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("yaml: ") + e.what());
  }
}

json load_document(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string ext = path.extension().string();
  if (ext == ".yaml" || ext == ".yml") return yaml_to_json(buf.str());
  json j = json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return j;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Part-based object layout generation"};
  app.name("opal");
  app.require_subcommand(1);
  app.set_version_flag("--version", "opal 0.1.0");

  std::uint64_t seed = 0;
  bool verbose = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Random seed");
    sub->add_flag("-v,--verbose", verbose, "Debug logging");
  };

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic annotated corpus");
  synth_cmd->add_option("--config", synth.config, "Synthetic corpus config (JSON or YAML)");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--instances", synth.instances, "Instances per category")->check(CLI::PositiveNumber);
  add_common(synth_cmd);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train one model stage");
  train_cmd->add_option("stage", train.stage, "boxvae | labelmapvae | bmvae | bslstm | cggan")
      ->required()
      ->check(CLI::IsMember({"boxvae", "labelmapvae", "bmvae", "bslstm", "cggan"}));
  train_cmd->add_option("--corpus", train.corpus, "Corpus directory (manifest.json + schema.json)")->required();
  train_cmd->add_option("--config", train.config, "Training config (JSON or YAML)");
  train_cmd->add_option("--out", train.out, "Output directory for checkpoints and metrics");
  train_cmd->add_option("--epochs", train.epochs, "Epochs");
  train_cmd->add_option("--lr", train.learning_rate, "Learning rate");
  train_cmd->add_option("--batch-size", train.batch_size, "Batch size");
  train_cmd->add_option("--clip-norm", train.clip_norm, "Global gradient-norm clip (0 disables)");
  add_common(train_cmd);

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Generate a layout");
  gen.models.add_to(gen_cmd);
  gen_cmd->add_option("--request", gen.request, "Generation request file (JSON or YAML)");
  gen_cmd->add_option("--category", gen.category, "Category name or id");
  gen_cmd->add_option("--parts", gen.parts, "Comma-separated part names");
  gen_cmd->add_option("--out", gen.out, "Output stem for <stem>.png and <stem>.json");
  add_common(gen_cmd);

  EditArgs edit;
  auto* edit_cmd = app.add_subcommand("edit", "Edit boxes of a generated layout and regenerate masks");
  edit.models.add_to(edit_cmd);
  edit_cmd->add_option("--layout", edit.layout, "Layout sidecar written by generate or edit")->required();
  edit_cmd->add_option("--edits", edit.edits, "Edit list file (JSON or YAML)");
  edit_cmd->add_option("--move", edit.moves, "part=x0,y0,x1,y1");
  edit_cmd->add_option("--add", edit.adds, "part=x0,y0,x1,y1");
  edit_cmd->add_option("--remove", edit.removes, "Part name");
  edit_cmd->add_option("--out", edit.out, "Output stem");
  add_common(edit_cmd);

  AddPartArgs addpart;
  auto* add_cmd = app.add_subcommand("addpart", "Add a part to an existing object");
  addpart.models.add_to(add_cmd);
  add_cmd->add_option("--layout", addpart.layout, "Layout sidecar written by generate or edit");
  add_cmd->add_option("--corpus", addpart.corpus, "Corpus directory holding the instance");
  add_cmd->add_option("--instance", addpart.instance, "Instance id in the corpus");
  add_cmd->add_option("--part", addpart.part, "Part name to add")->required();
  add_cmd->add_option("--out", addpart.out, "Output stem");
  add_common(add_cmd);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Reconstruction and generation metrics");
  eval.models.add_to(eval_cmd);
  eval_cmd->add_option("--corpus", eval.corpus, "Corpus directory")->required();
  eval_cmd->add_option("--split", eval.split, "train | val | test | all");
  eval_cmd->add_option("--generations", eval.generations, "Prior generations to score")->check(CLI::NonNegativeNumber);
  add_common(eval_cmd);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  serve.models.add_to(serve_cmd);
  serve_cmd->add_option("--host", serve.options.host, "Bind address");
  serve_cmd->add_option("--port", serve.options.port, "Port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--threads", serve.options.worker_threads, "Worker threads")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--sessions", serve.options.session_capacity, "Session capacity")->check(CLI::PositiveNumber);
  add_common(serve_cmd);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);
  auto seed_if_given = [&](CLI::App* sub) -> std::optional<std::uint64_t> {
    if (sub->count("--seed")) return seed;
    return std::nullopt;
  };

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, seed, out);
    if (train_cmd->parsed()) return cmd_train(train, seed_if_given(train_cmd), out);
    if (gen_cmd->parsed()) return cmd_generate(gen, seed_if_given(gen_cmd), out);
    if (edit_cmd->parsed()) return cmd_edit(edit, seed_if_given(edit_cmd), out);
    if (add_cmd->parsed()) return cmd_addpart(addpart, seed_if_given(add_cmd), out);
    if (eval_cmd->parsed()) return cmd_eval(eval, seed, out);
    if (serve_cmd->parsed()) return cmd_serve(serve, seed);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace opal::cli
