#include <benchmark/benchmark.h>

#include <memory>

#include "spreadarray/boxnorm.hpp"
#include "spreadarray/coding.hpp"
#include "spreadarray/decomp.hpp"
#include "spreadarray/models.hpp"

using namespace spreadarray;

namespace {

BoxFunction random_function(std::size_t q, int d, std::uint64_t seed) {
  SeededRng rng(seed);
  BoxFunction h;
  h.base.assign(q, 1.0 / static_cast<double>(q));
  h.d = d;
  h.values.resize(h.cells());
  for (double& v : h.values) v = 2.0 * rng.uniform() - 1.0;
  return h;
}

ArrayModel product_model(Index n, int d) {
  FunctionArray f;
  f.seed_weights = {0.5, 0.5};
  f.coord_weights = {0.3, 0.7};
  f.d = d;
  f.table.resize(2 * (std::size_t{1} << d));
  SeededRng rng(11);
  for (int& v : f.table) v = static_cast<int>(rng.next() % 2);
  return ArrayModel::function(n, f, Alphabet::from_values({-1.0, 1.0}));
}

void BM_BoxNorm(benchmark::State& state) {
  const auto h = random_function(static_cast<std::size_t>(state.range(0)), static_cast<int>(state.range(1)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(box_norm(h));
}
BENCHMARK(BM_BoxNorm)->Args({16, 2})->Args({64, 2})->Args({8, 3})->Args({16, 3});

void BM_SymmetricPartition(benchmark::State& state) {
  CodingOptions opts;
  opts.max_retries = 1;
  opts.strict = false;
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        random_symmetric_partition(static_cast<std::size_t>(state.range(0)), 2, {0.5, 0.5}, 1.0, seed++, opts));
}
BENCHMARK(BM_SymmetricPartition)->Arg(32)->Arg(64);

void BM_PairMoments(benchmark::State& state) {
  const auto model = product_model(2000, 2);
  SeededRng rng(5);
  for (auto _ : state) {
    PairMomentTable table(model);
    double acc = 0.0;
    for (int i = 0; i < 200; ++i) {
      const Index a = 1 + static_cast<Index>(rng.next() % 1000), b = 1001 + static_cast<Index>(rng.next() % 999);
      acc += table({a, b}, {a, b + 1 > 2000 ? b - 1 : b + 1});
    }
    benchmark::DoNotOptimize(acc);
  }
}
BENCHMARK(BM_PairMoments);

void BM_Decompose(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const Index kappa = 2, k = 3;
  const Index n = minimal_plan_n(d, kappa, k);
  const auto model = product_model(n, d);
  const auto plan = build_plan(n, d, kappa, k);
  for (auto _ : state) {
    const auto dp = decompose(std::make_shared<EntryMoments>(model), plan);
    benchmark::DoNotOptimize(analyze_decomposition(dp));
  }
}
BENCHMARK(BM_Decompose)->Arg(1)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
