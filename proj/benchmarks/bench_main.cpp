// SPDX-License-Identifier: Apache-2.0
//
// Micro benchmarks for the hot paths of training and generation.
#include <benchmark/benchmark.h>

#include <memory>

#include "opal/boxvae.hpp"
#include "opal/dataset.hpp"
#include "opal/gcn.hpp"
#include "opal/labelmap.hpp"
#include "opal/pipeline.hpp"
#include "opal/random.hpp"
#include "opal/training.hpp"

namespace {

using namespace opal;

const dataset::Corpus& corpus() {
  static const dataset::Corpus c = dataset::synth_generate(dataset::SynthConfig::default_config(8), 1);
  return c;
}

const std::vector<dataset::PartGraph>& graphs() {
  static const auto g = training::part_graphs(corpus());
  return g;
}

const std::vector<labelmap::PartMaskSet>& masks() {
  static const auto m = training::part_masks(corpus());
  return m;
}

boxvae::BoxVaeDims box_dims() {
  boxvae::BoxVaeDims d;
  d.p_max = corpus().schemas.p_max();
  d.num_categories = corpus().schemas.num_categories();
  return d;
}

labelmap::LabelMapDims mask_dims() {
  labelmap::LabelMapDims d;
  d.p_max = corpus().schemas.p_max();
  d.num_categories = corpus().schemas.num_categories();
  return d;
}

void BM_Conv2d(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(1);
  const ad::ConvGeometry g{16, 32, size, size, 4, 2, 1};
  const ad::Var x = ad::constant(standard_normal(6, 16 * size * size, rng));
  const ad::Var w = ad::constant(standard_normal(32, 16 * 16, rng));
  const ad::Var b = ad::constant(ad::Matrix::Zero(1, 32));
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::conv2d(x, w, b, g).value().data());
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32);

void BM_NormalizeAdjacency(benchmark::State& state) {
  const auto& g = graphs().front();
  for (auto _ : state) benchmark::DoNotOptimize(gcn::normalize_adjacency(g.adjacency).data());
}
BENCHMARK(BM_NormalizeAdjacency);

void BM_BoxVaeTrainStep(benchmark::State& state) {
  boxvae::BoxVae model(box_dims(), 3);
  training::BoxVaeObjective objective(model, graphs());
  Rng rng(4);
  std::size_t i = 0;
  for (auto _ : state) {
    model.parameters().zero_grad();
    const training::SampleLoss loss = objective.sample_loss(i++ % graphs().size(), rng, 1.0);
    ad::backward(loss.objective);
    benchmark::DoNotOptimize(loss.recon);
  }
}
BENCHMARK(BM_BoxVaeTrainStep)->Unit(benchmark::kMicrosecond);

void BM_LabelMapVaeTrainStep(benchmark::State& state) {
  labelmap::LabelMapVae model(mask_dims(), 5);
  training::LabelMapVaeObjective objective(model, graphs(), masks());
  Rng rng(6);
  std::size_t i = 0;
  for (auto _ : state) {
    model.parameters().zero_grad();
    const training::SampleLoss loss = objective.sample_loss(i++ % graphs().size(), rng, 1.0);
    ad::backward(loss.objective);
    benchmark::DoNotOptimize(loss.recon);
  }
}
BENCHMARK(BM_LabelMapVaeTrainStep)->Unit(benchmark::kMillisecond);

void BM_ComposeLayout(benchmark::State& state) {
  const auto& inst = corpus().instances.front();
  const auto& set = masks().front();
  std::vector<int> order;
  for (const auto& [k, b] : inst.part_boxes) order.push_back(k);
  for (auto _ : state) {
    const auto layout = labelmap::compose_layout(set, inst.part_boxes, order, inst.category_id);
    benchmark::DoNotOptimize(layout.label_map.pixels.data());
  }
}
BENCHMARK(BM_ComposeLayout)->Unit(benchmark::kMicrosecond);

void BM_GenerateLayout(benchmark::State& state) {
  const pipeline::ModelBundle models(corpus().schemas, std::make_shared<const boxvae::BoxVae>(box_dims(), 7),
                                     std::make_shared<const labelmap::LabelMapVae>(mask_dims(), 8));
  pipeline::GenerationRequest req;
  req.category_id = 1;
  req.parts = {0, 1, 2, 3, 4};
  for (auto _ : state) {
    ++req.seed;
    const auto r = pipeline::generate_layout(req, models);
    benchmark::DoNotOptimize(r.layout.label_map.pixels.data());
  }
}
BENCHMARK(BM_GenerateLayout)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
