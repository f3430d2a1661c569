#include <benchmark/benchmark.h>

#include <memory>

#include "tdamc/intervals.hpp"
#include "tdamc/noise.hpp"
#include "tdamc/solver.hpp"
#include "tdamc/topdown.hpp"

namespace {

using namespace tdamc;

std::shared_ptr<const Schema> desk_schema() {
  return std::make_shared<const Schema>(Universe::person,
                                        std::vector<Attribute>{{"sex", 2}, {"age", 4}, {"hisp", 2}});
}

void BM_DiscreteGaussian(benchmark::State& state) {
  const double sigma2 = static_cast<double>(state.range(0));
  SeedStream stream(7);
  for (auto _ : state) benchmark::DoNotOptimize(sample_discrete_gaussian(sigma2, stream));
}
BENCHMARK(BM_DiscreteGaussian)->Arg(1)->Arg(25)->Arg(400);

void BM_SolveLevel(benchmark::State& state) {
  const auto children = static_cast<std::size_t>(state.range(0));
  const std::size_t cells = 16;
  auto detailed = std::make_shared<const std::vector<std::uint32_t>>([&] {
    std::vector<std::uint32_t> m(cells);
    for (std::size_t j = 0; j < cells; ++j) m[j] = static_cast<std::uint32_t>(j);
    return m;
  }());
  SeedStream stream(11);
  LevelProblem p;
  p.n_children = children;
  p.n_cells = cells;
  std::vector<double> parent(cells, 0);
  for (std::size_t c = 0; c < children; ++c) {
    std::vector<double> y(cells);
    for (std::size_t j = 0; j < cells; ++j) {
      const double truth = static_cast<double>(stream.uniform_int(6));
      parent[j] += truth;
      y[j] = truth + static_cast<double>(sample_discrete_gaussian(4.0, stream));
    }
    p.terms.push_back({c, detailed, std::move(y), 4.0});
  }
  p.parent = parent;
  for (auto _ : state) benchmark::DoNotOptimize(solve_level(p));
}
BENCHMARK(BM_SolveLevel)->Arg(4)->Arg(8)->Arg(16);

void BM_TdaRun(benchmark::State& state) {
  SynthConfig synth;
  synth.schema = desk_schema();
  const auto cef = synth_cef(synth, 1);
  const auto& h = cef.hierarchy();
  TdaParams params;
  params.strategy = default_strategy(*synth.schema, h);
  params.alloc = BudgetAllocation::uniform_groups(
      4.0, {{"root", 0.25}, {"state", 0.25}, {"county", 0.25}, {"block", 0.25}}, h, params.strategy);
  params.invariants.level1_totals = true;
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(tda_run(cef, params, SeedStream(++i)));
}
BENCHMARK(BM_TdaRun)->Unit(benchmark::kMillisecond);

void BM_AllIntervals(benchmark::State& state) {
  std::vector<double> values(100);
  SeedStream stream(3);
  for (auto& v : values) v = 50.0 + static_cast<double>(sample_discrete_gaussian(16.0, stream));
  for (auto _ : state) benchmark::DoNotOptimize(all_intervals("q", 50, values));
}
BENCHMARK(BM_AllIntervals);

}  // namespace

BENCHMARK_MAIN();
