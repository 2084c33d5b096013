// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "opal/checkpoint.hpp"
#include "opal/error.hpp"
#include "support.hpp"

namespace opal {
namespace {

using ad::Matrix;

TEST(Checkpoint, RoundTripsValuesAndSidecar) {
  const auto dir = test::scratch_dir("ckpt_roundtrip");
  Rng rng(1);
  nn::ParameterSet a;
  a.add("layer.w", test::uniform_matrix(3, 4, -1, 1, rng));
  a.add("layer.b", test::uniform_matrix(1, 4, -1, 1, rng));
  checkpoint::save(dir / "m.bin", a, {{"kind", "demo"}});
  const auto sidecar = checkpoint::read_sidecar(dir / "m.bin");
  EXPECT_EQ(sidecar["kind"], "demo");
  EXPECT_EQ(sidecar["format_version"], checkpoint::kFormatVersion);
  EXPECT_EQ(sidecar["parameter_count"], 16);
  EXPECT_EQ(checkpoint::sidecar_path(dir / "m.bin"), dir / "m.bin.json");

  nn::ParameterSet b;
  b.add("layer.w", Matrix::Zero(3, 4));
  b.add("layer.b", Matrix::Zero(1, 4));
  checkpoint::load_into(dir / "m.bin", b);
  EXPECT_EQ(b.get("layer.w").value(), a.get("layer.w").value());
  EXPECT_EQ(b.get("layer.b").value(), a.get("layer.b").value());
}

TEST(Checkpoint, ShapeOrNameMismatchIsRejected) {
  const auto dir = test::scratch_dir("ckpt_mismatch");
  nn::ParameterSet a;
  a.add("w", Matrix::Ones(2, 2));
  checkpoint::save(dir / "m.bin", a, {});
  nn::ParameterSet wrong_shape;
  wrong_shape.add("w", Matrix::Ones(2, 3));
  EXPECT_THROW(checkpoint::load_into(dir / "m.bin", wrong_shape), CheckpointError);
  nn::ParameterSet wrong_name;
  wrong_name.add("v", Matrix::Ones(2, 2));
  EXPECT_THROW(checkpoint::load_into(dir / "m.bin", wrong_name), CheckpointError);
}

TEST(Checkpoint, TruncatedOrMissingBlobIsRejected) {
  const auto dir = test::scratch_dir("ckpt_truncated");
  nn::ParameterSet a;
  a.add("w", Matrix::Ones(8, 8));
  checkpoint::save(dir / "m.bin", a, {});
  std::filesystem::resize_file(dir / "m.bin", std::filesystem::file_size(dir / "m.bin") / 2);
  EXPECT_THROW(checkpoint::load_into(dir / "m.bin", a), CheckpointError);
  EXPECT_THROW(checkpoint::load_into(dir / "absent.bin", a), CheckpointError);
}

TEST(Checkpoint, ModelWeightsSurviveAReload) {
  const auto dir = test::scratch_dir("ckpt_model");
  const auto& schemas = test::small_corpus().schemas;
  boxvae::BoxVaeDims d;
  d.p_max = schemas.p_max();
  d.num_categories = schemas.num_categories();
  boxvae::BoxVae a(d, 3), b(d, 4);
  checkpoint::save(dir / "box.bin", a.parameters(), {{"dims", d.to_json()}});
  checkpoint::load_into(dir / "box.bin", b.parameters());
  const auto& inst = test::small_corpus().instances.front();
  const auto cond = boxvae::Conditioning::of(dataset::build_part_graph(inst, schemas.by_id(inst.category_id)));
  const Matrix z = Matrix::Constant(1, d.latent, 0.1);
  EXPECT_EQ(a.decode_output(z, cond).boxes, b.decode_output(z, cond).boxes);
}

}  // namespace
}  // namespace opal
