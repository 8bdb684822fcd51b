// Serial reference vs OpenMP kernels on a Dirichlet world.
//
//   ./build/bench/bench_kernels --benchmark_filter=Coverage
//   CONFORMAL_DECODE_THREADS=4 ./build/bench/bench_kernels

#include <benchmark/benchmark.h>

#include <map>
#include <utility>

#include "ctp/kernels.hpp"
#include "ctp/synth.hpp"

namespace {

const ctp::Dataset& world(std::uint32_t vocab) {
  static std::map<std::uint32_t, ctp::Dataset> cache;
  auto it = cache.find(vocab);
  if (it == cache.end()) {
    ctp::SynthSpec spec;
    spec.vocab_size = vocab;
    spec.num_records = vocab >= 1000 ? 2000 : 20000;
    spec.seed = 11;
    it = cache.emplace(vocab, ctp::gen_dirichlet_world(spec)).first;
  }
  return it->second;
}

template <ctp::kernels::Exec E>
void BM_ApsScores(benchmark::State& state) {
  const auto& ds = world(static_cast<std::uint32_t>(state.range(0)));
  std::vector<double> out(ds.size());
  for (auto _ : state) {
    ctp::kernels::aps_scores(ds.records, out, E);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}

template <ctp::kernels::Exec E>
void BM_Entropies(benchmark::State& state) {
  const auto& ds = world(static_cast<std::uint32_t>(state.range(0)));
  std::vector<double> out(ds.size());
  for (auto _ : state) {
    ctp::kernels::entropies(ds.records, out, E);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}

template <ctp::kernels::Exec E>
void BM_Coverage(benchmark::State& state) {
  const auto& ds = world(static_cast<std::uint32_t>(state.range(0)));
  std::vector<double> q(ds.size(), 0.9);
  std::vector<std::uint8_t> covered(ds.size());
  std::vector<std::size_t> sizes(ds.size());
  for (auto _ : state) {
    ctp::kernels::coverage(ds.records, q, covered, sizes, E);
    benchmark::DoNotOptimize(covered.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}

using ctp::kernels::Exec;
BENCHMARK(BM_ApsScores<Exec::Serial>)->Arg(50)->Arg(1000);
BENCHMARK(BM_ApsScores<Exec::Parallel>)->Arg(50)->Arg(1000);
BENCHMARK(BM_Entropies<Exec::Serial>)->Arg(50)->Arg(1000);
BENCHMARK(BM_Entropies<Exec::Parallel>)->Arg(50)->Arg(1000);
BENCHMARK(BM_Coverage<Exec::Serial>)->Arg(50)->Arg(1000);
BENCHMARK(BM_Coverage<Exec::Parallel>)->Arg(50)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
