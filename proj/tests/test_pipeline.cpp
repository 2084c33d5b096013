// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "opal/checkpoint.hpp"
#include "opal/error.hpp"
#include "opal/pipeline.hpp"
#include "opal/training.hpp"
#include "support.hpp"

namespace opal {
namespace {

using dataset::Box;
using pipeline::EditCommand;
using pipeline::GenerationRequest;

class Pipeline : public ::testing::Test {
 protected:
  static const pipeline::ModelBundle& models() {
    static const auto bundle = test::untrained_bundle(dataset::synth_schemas(dataset::SynthConfig::default_config()));
    return *bundle;
  }
  static const dataset::PartSchema& biped() { return *models().schemas().find_by_name("biped"); }

  static GenerationRequest request(std::vector<int> parts, std::uint64_t seed = 7) {
    GenerationRequest req;
    req.category_id = biped().category_id;
    req.parts = std::move(parts);
    req.seed = seed;
    return req;
  }
};

TEST_F(Pipeline, EmptyPartListGivesABlankCanvas) {
  const auto r = pipeline::generate_layout(request({}), models());
  EXPECT_EQ(r.layout.label_map.foreground_count(), 0u);
  EXPECT_TRUE(r.boxes().empty());
}

TEST_F(Pipeline, GenerationIsDeterministicAndHonoursTheRequest) {
  const auto a = pipeline::generate_layout(request({0, 1, 4}), models());
  const auto b = pipeline::generate_layout(request({0, 1, 4}), models());
  EXPECT_EQ(a.layout.hash(), b.layout.hash());
  EXPECT_EQ(a.layout.label_map, b.layout.label_map);
  std::vector<int> keys;
  for (const auto& [k, box] : a.boxes()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<int>{0, 1, 4}));
  EXPECT_TRUE(a.layout.satisfies_containment());
  for (int k : a.layout.parts_drawn()) EXPECT_TRUE(a.boxes().count(k));
}

TEST_F(Pipeline, FixedBoxesOverrideDecodedOnes) {
  GenerationRequest req = request({0, 1});
  req.fixed_boxes[1] = {-0.5, -0.9, 0.5, -0.4};
  EXPECT_EQ(pipeline::generate_layout(req, models()).boxes().at(1), req.fixed_boxes[1]);
}

TEST_F(Pipeline, EmptyEditReproducesTheLayout) {
  const GenerationRequest req = request({0, 1, 2, 3});
  const auto original = pipeline::generate_layout(req, models());
  const auto edited = pipeline::edit_and_regenerate(original.boxes(), {}, req, models());
  EXPECT_EQ(edited.layout.hash(), original.layout.hash());
}

TEST_F(Pipeline, DoubledBoxKeepsItsPixelsInside) {
  const GenerationRequest req = request({0, 1, 4});
  const auto original = pipeline::generate_layout(req, models());
  const Box b = original.boxes().at(0);
  const double hw = b.width(), hh = b.height();
  EditCommand edit;
  edit.part_index = 0;
  edit.box = {b.center_x() - hw, b.center_y() - hh, b.center_x() + hw, b.center_y() + hh};
  const auto edited = pipeline::edit_and_regenerate(original.boxes(), {edit}, req, models());
  EXPECT_EQ(edited.boxes().at(0), edit.box);
  EXPECT_EQ(edited.boxes().at(1), original.boxes().at(1));
  EXPECT_EQ(edited.boxes().at(4), original.boxes().at(4));
  EXPECT_TRUE(edited.layout.satisfies_containment());
}

TEST_F(Pipeline, BoxOutsideTheCanvasIsRejected) {
  const GenerationRequest req = request({0, 1});
  const auto original = pipeline::generate_layout(req, models());
  EditCommand edit;
  edit.part_index = 1;
  edit.box = {1.2, 1.2, 1.6, 1.6};
  EXPECT_THROW(pipeline::edit_and_regenerate(original.boxes(), {edit}, req, models()), ValidationError);
  EXPECT_TRUE(pipeline::box_problem(edit.box).has_value());
  EXPECT_TRUE(pipeline::box_problem({0.2, 0.0, 0.1, 0.5}).has_value());
  EXPECT_FALSE(pipeline::box_problem({0.9, 0.9, 1.3, 1.3}).has_value());
}

TEST_F(Pipeline, AddThenRemoveRestoresTheBoxes) {
  const GenerationRequest req = request({0, 1, 4});
  const auto original = pipeline::generate_layout(req, models());
  const auto added = pipeline::add_part(original, 5, models(), 3);
  EXPECT_EQ(added.boxes().size(), 4u);
  for (const auto& [k, b] : original.boxes()) EXPECT_EQ(added.boxes().at(k), b);
  EXPECT_TRUE(added.graph.presence[5]);
  for (int k : {0, 1, 4}) EXPECT_TRUE(added.graph.presence[static_cast<std::size_t>(k)]);

  EditCommand remove;
  remove.op = EditCommand::Op::kRemove;
  remove.part_index = 5;
  GenerationRequest after = req;
  const auto removed = pipeline::edit_and_regenerate(added.boxes(), {remove}, after, models());
  EXPECT_EQ(removed.boxes(), original.boxes());
  EXPECT_EQ(removed.layout.hash(), original.layout.hash());
}

TEST_F(Pipeline, AddingAPresentPartIsANoOpWithNotice) {
  const auto original = pipeline::generate_layout(request({0, 1}), models());
  const auto again = pipeline::add_part(original, 1, models(), 3);
  EXPECT_EQ(again.layout.hash(), original.layout.hash());
  EXPECT_FALSE(again.notices.empty());
}

TEST_F(Pipeline, AddPartToACorpusInstance) {
  const dataset::Corpus corpus = dataset::synth_generate(dataset::SynthConfig::default_config(3), 2);
  for (const auto& inst : corpus.instances) {
    const dataset::PartSchema& schema = corpus.schemas.by_id(inst.category_id);
    int missing = -1;
    for (int k = 0; k < schema.part_count(); ++k) {
      if (!inst.presence[static_cast<std::size_t>(k)]) missing = k;
    }
    if (missing < 0) continue;
    const auto added = pipeline::add_part(inst, missing, models(), 1);
    EXPECT_EQ(added.boxes().size(), inst.part_boxes.size() + 1);
    for (const auto& [k, b] : inst.part_boxes) EXPECT_EQ(added.boxes().at(k), b);
    EXPECT_TRUE(added.layout.satisfies_containment());
  }
}

TEST(GenerationRequestJson, NamesAndIndicesResolve) {
  const auto schemas = dataset::synth_schemas(dataset::SynthConfig::default_config());
  const auto req = GenerationRequest::from_json(
      {{"category", "glider"}, {"parts", {"wing_r", "fuselage", 2}}, {"seed", 7}}, schemas);
  EXPECT_EQ(req.category_id, 2);
  EXPECT_EQ(req.parts, (std::vector<int>{0, 2}));
  EXPECT_EQ(req.seed, 7u);
  const auto back = GenerationRequest::from_json(req.to_json(schemas), schemas);
  EXPECT_EQ(back.parts, req.parts);
  EXPECT_THROW(GenerationRequest::from_json({{"category", "boat"}}, schemas), ValidationError);
  EXPECT_THROW(GenerationRequest::from_json({{"category", "glider"}, {"parts", {"head"}}}, schemas),
               ValidationError);
}

TEST(EditCommandJson, ParsesOps) {
  const auto schemas = dataset::synth_schemas(dataset::SynthConfig::default_config());
  const auto& schema = schemas.by_id(1);
  const auto move = EditCommand::from_json({{"part", "head"}, {"box", {-0.1, -0.9, 0.1, -0.6}}}, schema);
  EXPECT_EQ(move.op, EditCommand::Op::kMove);
  EXPECT_EQ(move.part_index, 1);
  const auto remove = EditCommand::from_json({{"op", "remove"}, {"part", 2}}, schema);
  EXPECT_EQ(remove.op, EditCommand::Op::kRemove);
  EXPECT_THROW(EditCommand::from_json({{"op", "spin"}, {"part", 2}}, schema), ValidationError);
}

TEST(ModelBundle, LoadsMatchingCheckpointsAndRejectsMismatch) {
  const auto dir = test::scratch_dir("bundle_load");
  const auto schemas = dataset::synth_schemas(dataset::SynthConfig::default_config());
  boxvae::BoxVaeDims bd;
  bd.p_max = schemas.p_max();
  bd.num_categories = schemas.num_categories();
  labelmap::LabelMapDims md;
  md.p_max = bd.p_max;
  md.num_categories = bd.num_categories;
  auto boxes = std::make_shared<boxvae::BoxVae>(bd, 5);
  auto masks = std::make_shared<labelmap::LabelMapVae>(md, 6);
  const nlohmann::json side = training::schema_sidecar(schemas);
  auto box_side = side, mask_side = side;
  box_side["kind"] = "boxvae";
  box_side["model"] = {{"dims", bd.to_json()}};
  mask_side["kind"] = "labelmapvae";
  mask_side["model"] = {{"dims", md.to_json()}};
  checkpoint::save(dir / "box.bin", boxes->parameters(), box_side);
  checkpoint::save(dir / "mask.bin", masks->parameters(), mask_side);
  const pipeline::ModelBundle direct(schemas, boxes, masks);
  const auto loaded = pipeline::ModelBundle::load(dir / "box.bin", dir / "mask.bin");
  GenerationRequest req;
  req.category_id = 1;
  req.parts = {0, 1};
  req.seed = 4;
  EXPECT_EQ(pipeline::generate_layout(req, loaded).layout.hash(), pipeline::generate_layout(req, direct).layout.hash());

  auto renamed = schemas.to_json();
  renamed["categories"][0]["name"] = "triped";
  auto bad_side = training::schema_sidecar(dataset::SchemaSet::from_json(renamed));
  bad_side["kind"] = "labelmapvae";
  bad_side["model"] = mask_side["model"];
  checkpoint::save(dir / "mask_bad.bin", masks->parameters(), bad_side);
  EXPECT_THROW(pipeline::ModelBundle::load(dir / "box.bin", dir / "mask_bad.bin"), CheckpointError);
  EXPECT_THROW(pipeline::ModelBundle::load(dir / "mask.bin", dir / "box.bin"), CheckpointError);
}

}  // namespace
}  // namespace opal
