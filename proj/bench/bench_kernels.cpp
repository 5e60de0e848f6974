// Serial reference kernels against their OpenMP versions.  Thread count
// follows OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include "riskmpc/covpred.hpp"
#include "riskmpc/simcore.hpp"
#include "riskmpc/viosim.hpp"

using namespace riskmpc;

namespace {

DatasetConfig small_dataset() {
  DatasetConfig cfg;
  cfg.maps = 4;
  cfg.episodes_per_map = 2;
  cfg.steps = 100;
  return cfg;
}

void BM_gen_dataset_serial(benchmark::State& state) {
  const auto cfg = small_dataset();
  const auto maps = random_arenas(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(gen_dataset_serial(maps, cfg));
}

void BM_gen_dataset_parallel(benchmark::State& state) {
  const auto cfg = small_dataset();
  const auto maps = random_arenas(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(gen_dataset(maps, cfg));
}

struct GradFixture {
  NetParams params;
  std::vector<Sequence> batch;
  GradFixture() {
    const Dataset data = gen_dataset(small_dataset());
    batch = data.episodes;
    params = init_params(NetSpec{}, 3);
  }
};

const GradFixture& grad_fixture() {
  static const GradFixture f;
  return f;
}

void BM_bptt_grad_serial(benchmark::State& state) {
  const auto& f = grad_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(bptt_grad_serial(f.params, f.batch));
}

void BM_bptt_grad_parallel(benchmark::State& state) {
  const auto& f = grad_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(bptt_grad(f.params, f.batch));
}

Scenario short_scenario() {
  Scenario s = default_scenario();
  s.max_time = 1.0;
  return s;
}

void BM_compare_serial(benchmark::State& state) {
  const Scenario s = short_scenario();
  for (auto _ : state) benchmark::DoNotOptimize(compare_serial(s, nullptr, 4));
}

void BM_compare_parallel(benchmark::State& state) {
  const Scenario s = short_scenario();
  for (auto _ : state) benchmark::DoNotOptimize(compare(s, nullptr, 4));
}

}  // namespace

BENCHMARK(BM_gen_dataset_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gen_dataset_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_bptt_grad_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_bptt_grad_parallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_compare_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_compare_parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
