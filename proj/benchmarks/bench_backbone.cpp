#include <benchmark/benchmark.h>

#include "imagine/backend.hpp"
#include "imagine/scoring.hpp"

namespace {

using namespace imagine;
using namespace imagine::backend;

EncoderConfig bench_config(Mode mode) {
  EncoderConfig cfg;
  cfg.mode = mode;
  return cfg;  // library defaults: 2 layers, d 64, vocab 256
}

void EncodeForward(benchmark::State& state) {
  const EncoderConfig cfg =
      bench_config(state.range(0) == 0 ? Mode::encoder : Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams params = AdapterParams::init(cfg);
  const auto tokens = bb.tokenizer().tokenize(
      "a mid length sequence of plain words for the forward pass benchmark");
  for (auto _ : state) {
    auto hs = bb.encode(tokens, Adapter::lm, params);
    benchmark::DoNotOptimize(hs);
  }
}
BENCHMARK(EncodeForward)->Arg(0)->Arg(1);

void LmScoreDecoder(benchmark::State& state) {
  const EncoderConfig cfg = bench_config(Mode::decoder);
  const Backbone bb(cfg);
  const AdapterParams params = AdapterParams::init(cfg);
  const auto tokens = bb.tokenizer().tokenize("pick the plausible continuation now");
  for (auto _ : state) {
    benchmark::DoNotOptimize(scoring::lm_score(bb, params, tokens));
  }
}
BENCHMARK(LmScoreDecoder);

void LmScoreEncoderMasked(benchmark::State& state) {
  // One masked forward pass per token.
  const EncoderConfig cfg = bench_config(Mode::encoder);
  const Backbone bb(cfg);
  const AdapterParams params = AdapterParams::init(cfg);
  const auto tokens = bb.tokenizer().tokenize("pick the plausible continuation now");
  for (auto _ : state) {
    benchmark::DoNotOptimize(scoring::lm_score(bb, params, tokens));
  }
}
BENCHMARK(LmScoreEncoderMasked);

}  // namespace
