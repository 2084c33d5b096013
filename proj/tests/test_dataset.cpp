// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "opal/dataset.hpp"
#include "opal/error.hpp"
#include "support.hpp"

namespace opal {
namespace {

using dataset::Box;
using dataset::NormalizedInstance;
using dataset::ObjectInstance;

dataset::PartSchema two_part_schema() {
  dataset::PartSchema s;
  s.category_id = 1;
  s.category_name = "thing";
  s.part_names = {"a", "b"};
  s.p_max = 2;
  return s;
}

Raster filled(int h, int w, int x0, int y0, int x1, int y1) {
  Raster r(h, w);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) r.at(y, x) = 255;
  }
  return r;
}

TEST(NormalizeInstance, FullImagePartSpansTheFrame) {
  ObjectInstance obj{"full", 1, {{0, Raster(32, 32, 1)}}, 32, 32};
  const NormalizedInstance n = dataset::normalize_instance(obj, 3);
  EXPECT_EQ(n.part_boxes.at(0), (Box{-1, -1, 1, 1}));
  EXPECT_EQ(n.presence, (std::vector<std::uint8_t>{1, 0, 0}));
}

TEST(NormalizeInstance, LeftHalfPartOfACenteredObject) {
  ObjectInstance obj{"halves", 1, {{0, filled(20, 40, 0, 0, 20, 20)}, {1, filled(20, 40, 20, 0, 40, 20)}}, 20, 40};
  const NormalizedInstance n = dataset::normalize_instance(obj, 2);
  EXPECT_DOUBLE_EQ(n.part_boxes.at(0).x_min, -1.0);
  EXPECT_DOUBLE_EQ(n.part_boxes.at(0).x_max, 0.0);
  EXPECT_DOUBLE_EQ(n.part_boxes.at(1).x_max, 1.0);
}

TEST(NormalizeInstance, DisjointPartsAreCenteredInTheFrame) {
  ObjectInstance obj{"pair", 1, {{0, filled(64, 64, 4, 10, 14, 20)}, {1, filled(64, 64, 40, 30, 60, 50)}}, 64, 64};
  const NormalizedInstance n = dataset::normalize_instance(obj, 2);
  double x0 = 1, y0 = 1, x1 = -1, y1 = -1;
  for (const auto& [k, b] : n.part_boxes) {
    EXPECT_GE(b.x_min, -1.0);
    EXPECT_LE(b.x_max, 1.0);
    EXPECT_GE(b.y_min, -1.0);
    EXPECT_LE(b.y_max, 1.0);
    x0 = std::min(x0, b.x_min), y0 = std::min(y0, b.y_min), x1 = std::max(x1, b.x_max), y1 = std::max(y1, b.y_max);
  }
  EXPECT_NEAR(x0 + x1, 0.0, 1e-12);
  EXPECT_NEAR(y0 + y1, 0.0, 1e-12);
}

TEST(NormalizeInstance, EmptyMasksAreAbsentAndAllEmptyIsDegenerate) {
  ObjectInstance obj{"sparse", 1, {{0, filled(16, 16, 2, 2, 8, 8)}, {1, Raster(16, 16)}}, 16, 16};
  const NormalizedInstance n = dataset::normalize_instance(obj, 2);
  EXPECT_EQ(n.presence, (std::vector<std::uint8_t>{1, 0}));
  ObjectInstance empty{"empty", 1, {{0, Raster(16, 16)}}, 16, 16};
  EXPECT_THROW(dataset::normalize_instance(empty, 2), DegenerateError);
}

TEST(Renormalize, IsIdempotentOnNormalizedInstances) {
  for (const NormalizedInstance& inst : test::small_corpus().instances) {
    EXPECT_EQ(dataset::renormalize(inst), inst);
  }
}

TEST(Augment, IdentityPolicyIsBitExact) {
  for (const NormalizedInstance& inst : test::small_corpus().instances) {
    EXPECT_EQ(dataset::augment(inst, 9, {}), inst);
  }
}

TEST(Augment, MirrorIsAnInvolution) {
  dataset::AugmentPolicy always;
  always.mirror_probability = 1.0;
  for (const NormalizedInstance& inst : test::small_corpus().instances) {
    dataset::AugmentReport report;
    const NormalizedInstance once = dataset::augment(inst, 3, always, &report);
    EXPECT_TRUE(report.mirrored);
    for (const auto& [k, b] : once.part_boxes) {
      EXPECT_EQ(b.x_min, -inst.part_boxes.at(k).x_max);
      EXPECT_EQ(b.x_max, -inst.part_boxes.at(k).x_min);
    }
    EXPECT_EQ(dataset::augment(once, 4, always), inst);
  }
}

TEST(Augment, FixedPartScaleGrowsOneBoxAboutItsCenter) {
  NormalizedInstance inst;
  inst.category_id = 1;
  inst.presence = {1, 1};
  inst.part_boxes = {{0, {-1.0, -1.0, 0.0, 1.0}}, {1, {0.0, -0.5, 1.0, 0.5}}};
  inst.part_masks = {{0, Raster(4, 4, 1)}, {1, Raster(4, 4, 1)}};
  dataset::AugmentPolicy policy;
  policy.fixed_part_scale[1] = {1.5, 1.5};
  const NormalizedInstance out = dataset::augment(inst, 1, policy);
  // Before renormalization box 1 is [-0.25, 1.25] x [-0.75, 0.75]; the union
  // [-1, 1.25] x [-1, 1] is then recentred and divided by 1.125.
  const Box b = out.part_boxes.at(1);
  EXPECT_NEAR(b.width(), 1.5 / 1.125, 1e-12);
  EXPECT_NEAR(b.height(), 1.5 / 1.125, 1e-12);
  EXPECT_NEAR(out.part_boxes.at(0).width(), 1.0 / 1.125, 1e-12);
}

TEST(Augment, RandomPolicyKeepsBoxesValid) {
  dataset::AugmentPolicy policy;
  policy.translation = 0.2;
  policy.part_scale = 0.9;
  policy.object_scale = 0.3;
  policy.mirror_probability = 0.5;
  for (const NormalizedInstance& inst : test::small_corpus().instances) {
    const NormalizedInstance out = dataset::augment(inst, 77, policy);
    for (const auto& [k, b] : out.part_boxes) {
      EXPECT_GE(b.width(), dataset::kMinBoxSize * 0.999);
      EXPECT_GE(b.x_min, -1.0 - 1e-12);
      EXPECT_LE(b.x_max, 1.0 + 1e-12);
    }
    EXPECT_EQ(dataset::augment(inst, 77, policy), out);
  }
}

TEST(PartGraph, SinglePartHasNoEdges) {
  NormalizedInstance inst;
  inst.category_id = 1;
  inst.presence = {1, 0};
  inst.part_boxes = {{0, {-1, -1, 1, 1}}};
  const dataset::PartGraph g = dataset::build_part_graph(inst, two_part_schema());
  EXPECT_EQ(g.features.row(1).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(g.features(0, 0), 1.0);
  EXPECT_EQ(g.adjacency.sum(), 0.0);
}

TEST(PartGraph, OverlappingBoxesAreAdjacent) {
  NormalizedInstance inst;
  inst.category_id = 1;
  inst.presence = {1, 1};
  inst.part_boxes = {{0, {-1, -1, 0.1, 1}}, {1, {0.0, -0.5, 1, 0.5}}};
  const dataset::PartGraph g = dataset::build_part_graph(inst, two_part_schema());
  EXPECT_EQ(g.adjacency(0, 1), 1.0);
  EXPECT_EQ(g.adjacency(1, 0), 1.0);
  EXPECT_EQ(g.adjacency(0, 0), 0.0);
}

TEST(PartGraph, BoxesFartherThanTheDilationAreNotAdjacent) {
  NormalizedInstance inst;
  inst.category_id = 1;
  inst.presence = {1, 1};
  // Gap of 0.05 > 2 * 0.02.
  inst.part_boxes = {{0, {-1, -1, -0.05, 1}}, {1, {0.0, -0.5, 1, 0.5}}};
  EXPECT_EQ(dataset::build_part_graph(inst, two_part_schema()).adjacency.sum(), 0.0);
  // Gap of 0.03 < 2 * 0.02.
  inst.part_boxes[0].x_max = -0.03;
  EXPECT_EQ(dataset::build_part_graph(inst, two_part_schema()).adjacency.sum(), 2.0);
}

TEST(PartGraph, InvariantsHoldOnTheSyntheticCorpus) {
  const dataset::Corpus& corpus = test::small_corpus();
  for (const NormalizedInstance& inst : corpus.instances) {
    const dataset::PartGraph g = dataset::build_part_graph(inst, corpus.schemas.by_id(inst.category_id));
    EXPECT_EQ(g.p_max(), corpus.schemas.p_max());
    EXPECT_EQ(g.adjacency, g.adjacency.transpose());
    EXPECT_EQ(g.adjacency.diagonal().sum(), 0.0);
    for (int m = 0; m < g.p_max(); ++m) {
      EXPECT_TRUE(g.features(m, 0) == 0.0 || g.features(m, 0) == 1.0);
      if (g.features(m, 0) == 0.0) EXPECT_EQ(g.features.row(m).cwiseAbs().sum(), 0.0);
      for (int n = 0; n < g.p_max(); ++n) {
        if (g.adjacency(m, n) == 1.0) {
          EXPECT_EQ(g.features(m, 0), 1.0);
          EXPECT_EQ(g.features(n, 0), 1.0);
        }
      }
    }
  }
}

dataset::Corpus unsplit(int per_category) {
  dataset::Corpus c;
  c.schemas = dataset::SchemaSet({two_part_schema()});
  for (int i = 0; i < per_category; ++i) {
    NormalizedInstance inst;
    inst.id = std::to_string(i);
    inst.category_id = 1;
    c.instances.push_back(inst);
  }
  c.tags.assign(c.instances.size(), dataset::SplitTag::kUnset);
  return c;
}

TEST(SplitCorpus, HundredInstancesSplit75_15_10) {
  const dataset::Corpus c = dataset::split_corpus(unsplit(100), 1);
  EXPECT_EQ(c.indices(dataset::SplitTag::kTrain).size(), 75u);
  EXPECT_EQ(c.indices(dataset::SplitTag::kVal).size(), 15u);
  EXPECT_EQ(c.indices(dataset::SplitTag::kTest).size(), 10u);
}

TEST(SplitCorpus, SevenInstancesFloorValAndTest) {
  const dataset::Corpus c = dataset::split_corpus(unsplit(7), 1);
  EXPECT_EQ(c.indices(dataset::SplitTag::kTrain).size(), 6u);
  EXPECT_EQ(c.indices(dataset::SplitTag::kVal).size(), 1u);
  EXPECT_EQ(c.indices(dataset::SplitTag::kTest).size(), 0u);
}

TEST(SplitCorpus, EmptyAndPartition) {
  EXPECT_EQ(dataset::split_corpus(unsplit(0), 1).size(), 0u);
  const dataset::Corpus c = dataset::split_corpus(unsplit(37), 2);
  EXPECT_EQ(std::count(c.tags.begin(), c.tags.end(), dataset::SplitTag::kUnset), 0);
  EXPECT_EQ(c.tags.size(), 37u);
  EXPECT_EQ(dataset::split_corpus(unsplit(37), 2).tags, c.tags);
  EXPECT_THROW(dataset::split_corpus(unsplit(5), 1, {0.5, 0.5, 0.5}), ValidationError);
}

TEST(SyntheticCorpus, CountsAndDeterminism) {
  dataset::SynthConfig config = dataset::SynthConfig::default_config(50);
  for (auto& cat : config.categories) {
    for (auto& part : cat.parts) part.dropout = 0.0;
  }
  const dataset::Corpus a = dataset::synth_generate(config, 3);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_TRUE(a.errors.empty());
  for (const NormalizedInstance& inst : a.instances) {
    EXPECT_EQ(static_cast<int>(inst.part_boxes.size()), a.schemas.by_id(inst.category_id).part_count());
  }
  const dataset::Corpus b = dataset::synth_generate(config, 3);
  EXPECT_EQ(a.instances, b.instances);
  EXPECT_LE(a.schemas.p_max(), 6);
  EXPECT_EQ(a.schemas.num_categories(), 2);
}

TEST(SynthConfig, JsonRoundTrip) {
  const dataset::SynthConfig config = dataset::SynthConfig::default_config(7);
  EXPECT_EQ(dataset::SynthConfig::from_json(config.to_json()).to_json(), config.to_json());
}

TEST(SchemaSet, JsonRoundTripAndHash) {
  const dataset::SchemaSet& s = test::small_corpus().schemas;
  const dataset::SchemaSet back = dataset::SchemaSet::from_json(s.to_json());
  EXPECT_EQ(back.hash(), s.hash());
  EXPECT_EQ(back.p_max(), s.p_max());
  EXPECT_NE(s.find_by_name("biped"), nullptr);
  EXPECT_EQ(s.find_by_name("nope"), nullptr);
}

TEST(LoadCorpus, EmptyDirectoryGivesAnEmptyCorpus) {
  const auto dir = test::scratch_dir("empty_corpus");
  const dataset::Corpus c = dataset::load_corpus(dir, test::small_corpus().schemas);
  EXPECT_EQ(c.size(), 0u);
  EXPECT_TRUE(c.errors.empty());
}

TEST(LoadCorpus, SingleInstanceIsUnsplit) {
  const auto dir = test::scratch_dir("single_corpus");
  const dataset::SynthConfig config = dataset::SynthConfig::default_config(1);
  const auto objects = dataset::synth_objects(config, 2);
  const dataset::SchemaSet schemas = dataset::synth_schemas(config);
  dataset::write_annotations({objects.front()}, schemas, dir);
  const dataset::Corpus c = dataset::load_corpus(dir, schemas);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.tags.front(), dataset::SplitTag::kUnset);
}

TEST(LoadCorpus, CorruptMasksAreCountedAndSkipped) {
  const auto dir = test::scratch_dir("corrupt_corpus");
  const dataset::SynthConfig config = dataset::SynthConfig::default_config(5);
  const auto objects = dataset::synth_objects(config, 4);
  ASSERT_EQ(objects.size(), 10u);
  const dataset::SchemaSet schemas = dataset::synth_schemas(config);
  dataset::write_annotations(objects, schemas, dir);
  std::set<std::string> corrupted;
  for (int i : {2, 7}) {
    const auto& obj = objects[static_cast<std::size_t>(i)];
    const std::string part = schemas.by_id(obj.category_id).part_names[obj.part_masks.begin()->first];
    std::ofstream(dir / "masks" / (obj.image_id + "_" + part + ".png")) << "not a png";
    corrupted.insert(obj.image_id);
  }
  const dataset::Corpus c = dataset::load_corpus(dir, schemas);
  EXPECT_EQ(c.size(), 8u);
  EXPECT_EQ(c.errors.size(), 2u);
  for (const auto& inst : c.instances) EXPECT_FALSE(corrupted.count(inst.id));
}

TEST(LoadCorpus, RoundTripMatchesNormalizedSynthetic) {
  const auto dir = test::scratch_dir("roundtrip_corpus");
  const dataset::SynthConfig config = dataset::SynthConfig::default_config(3);
  const auto objects = dataset::synth_objects(config, 8);
  const dataset::SchemaSet schemas = dataset::synth_schemas(config);
  dataset::write_annotations(objects, schemas, dir);
  const dataset::Corpus loaded = dataset::load_corpus(dir, schemas);
  const dataset::Corpus direct = dataset::synth_generate(config, 8);
  ASSERT_EQ(loaded.size(), direct.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) EXPECT_EQ(loaded.instances[i], direct.instances[i]);
}

TEST(LoadCorpus, MissingManifestInNonEmptyDirectoryIsAConfigError) {
  const auto dir = test::scratch_dir("no_manifest");
  std::ofstream(dir / "stray.txt") << "x";
  EXPECT_THROW(dataset::load_corpus(dir, test::small_corpus().schemas), ConfigError);
}

}  // namespace
}  // namespace opal
