#include <benchmark/benchmark.h>

#include "imagine/imagination.hpp"
#include "imagine/rng.hpp"

namespace {

using namespace imagine;

imagination::ImageIndex make_index(int rows, int dim, uint64_t seed) {
  Rng rng(seed);
  std::vector<EmbeddingRecord> records(rows);
  for (int i = 0; i < rows; ++i) {
    records[i].id = "img-" + std::to_string(i);
    records[i].values.resize(dim);
    for (auto& v : records[i].values) v = static_cast<float>(rng.normal());
  }
  return imagination::build_index(records, "bench");
}

void RetrieveTop5(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  const int dim = 64;
  const auto index = make_index(rows, dim, 42);
  Rng rng(7);
  std::vector<float> query(dim);
  for (auto& v : query) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    auto hits = imagination::retrieve(std::span<const float>(query), index, 5);
    benchmark::DoNotOptimize(hits);
  }
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(RetrieveTop5)->Arg(1000)->Arg(10000)->Arg(100000);

void BuildIndex(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  Rng rng(42);
  std::vector<EmbeddingRecord> records(rows);
  for (int i = 0; i < rows; ++i) {
    records[i].id = "img-" + std::to_string(i);
    records[i].values.resize(64);
    for (auto& v : records[i].values) v = static_cast<float>(rng.normal());
  }
  for (auto _ : state) {
    auto index = imagination::build_index(records, "bench");
    benchmark::DoNotOptimize(index);
  }
}
BENCHMARK(BuildIndex)->Arg(1000)->Arg(10000);

}  // namespace
