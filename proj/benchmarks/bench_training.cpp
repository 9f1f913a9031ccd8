#include <benchmark/benchmark.h>

#include "imagine/rng.hpp"
#include "imagine/training.hpp"

namespace {

using namespace imagine;

std::vector<VQAInstance> bench_batch(const backend::EncoderConfig& cfg, int count) {
  static const char* kWords[] = {"river", "stone", "cloud", "ember",
                                 "frost", "quill", "moss",  "drift"};
  std::vector<VQAInstance> out;
  Rng rng(5);
  for (int i = 0; i < count; ++i) {
    VQAInstance inst;
    inst.qa.id = "b" + std::to_string(i);
    inst.qa.question = "pick the word";
    const size_t a = rng.below(8);
    size_t b = rng.below(7);
    if (b >= a) ++b;
    inst.qa.candidates = {kWords[a], kWords[b]};
    inst.qa.gold_index = static_cast<int>(rng.below(2));
    Mat patch(4, cfg.visual_dim);
    for (auto& v : patch.a) v = rng.normal();
    inst.image = ImageRef{"img" + std::to_string(i), VisualFeatureSet{patch}, std::nullopt};
    out.push_back(std::move(inst));
  }
  return out;
}

void GradientStep(benchmark::State& state) {
  backend::EncoderConfig cfg;
  cfg.mode = backend::Mode::decoder;
  const backend::Backbone bb(cfg);
  const backend::AdapterParams params = backend::AdapterParams::init(cfg);
  training::TrainConfig tc;
  const auto batch = bench_batch(cfg, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    backend::AdapterParams grads = backend::AdapterParams::zeros_like(params);
    auto rep = training::gradients(batch, bb, params, tc, grads);
    benchmark::DoNotOptimize(rep);
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(GradientStep)->Arg(4)->Arg(32);

void BatchLossForward(benchmark::State& state) {
  backend::EncoderConfig cfg;
  cfg.mode = backend::Mode::decoder;
  const backend::Backbone bb(cfg);
  const backend::AdapterParams params = backend::AdapterParams::init(cfg);
  training::TrainConfig tc;
  const auto batch = bench_batch(cfg, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(training::batch_loss(batch, bb, params, tc));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BatchLossForward);

}  // namespace
