// Serial reference kernels against their OpenMP counterparts.
//
//   ./build/bench/cbench_bench --benchmark_filter=ScorePairs

#include <benchmark/benchmark.h>

#include <random>

#include "cbench/kernels.hpp"
#include "support.hpp"

using namespace cbench;

namespace {

std::vector<std::string> sentences(std::size_t n, std::uint64_t seed) {
  static const char* words[] = {"the", "cat", "sees", "a", "cucumber", "and", "jumps", "over", "kitchen", "table",
                                "again", "nobody", "expected", "this", "plot", "twist"};
  std::mt19937_64 gen(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (std::size_t w = 0, len = 8 + gen() % 24; w < len; ++w) s += std::string(words[gen() % 16]) + " ";
    out.push_back(s);
  }
  return out;
}

std::vector<metrics::EntitySet> entity_sets(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<metrics::EntitySet> out(n);
  for (auto& s : out) {
    for (int k = 0; k < 12; ++k) s.insert("e" + std::to_string(gen() % 200));
  }
  return out;
}

template <bool Parallel>
void BM_ScorePairs(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto cand = sentences(n, 1), ref = sentences(n, 2);
  for (auto _ : state) {
    auto r = Parallel ? parallel::score_pairs(cand, ref) : serial::score_pairs(cand, ref);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <bool Parallel>
void BM_WeoPairs(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto gen = entity_sets(n, 3), ref = entity_sets(n, 4);
  const auto w = metrics::entity_weights(ref);
  for (auto _ : state) {
    auto r = Parallel ? parallel::weo_pairs(gen, ref, w) : serial::weo_pairs(gen, ref, w);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <bool Parallel>
void BM_RandomAnswers(benchmark::State& state) {
  const auto tasks =
      serial::build_tasks(test::synthetic_corpus(static_cast<std::size_t>(state.range(0))), TaskConfig::ranking(1)).tasks;
  for (auto _ : state) {
    auto r = Parallel ? parallel::random_answers(tasks, 5, 9) : serial::random_answers(tasks, 5, 9);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * tasks.size() * 5));
}

template <bool Parallel>
void BM_BuildTasks(benchmark::State& state) {
  const auto records = test::synthetic_corpus(static_cast<std::size_t>(state.range(0)));
  const TaskConfig cfg = TaskConfig::selection(3, 5, 1);
  for (auto _ : state) {
    auto r = Parallel ? parallel::build_tasks(records, cfg) : serial::build_tasks(records, cfg);
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * records.size()));
}

}  // namespace

BENCHMARK(BM_ScorePairs<false>)->Name("ScorePairs/serial")->Arg(2000);
BENCHMARK(BM_ScorePairs<true>)->Name("ScorePairs/parallel")->Arg(2000);
BENCHMARK(BM_WeoPairs<false>)->Name("WeoPairs/serial")->Arg(20000);
BENCHMARK(BM_WeoPairs<true>)->Name("WeoPairs/parallel")->Arg(20000);
BENCHMARK(BM_RandomAnswers<false>)->Name("RandomAnswers/serial")->Arg(5000);
BENCHMARK(BM_RandomAnswers<true>)->Name("RandomAnswers/parallel")->Arg(5000);
BENCHMARK(BM_BuildTasks<false>)->Name("BuildTasks/serial")->Arg(5000);
BENCHMARK(BM_BuildTasks<true>)->Name("BuildTasks/parallel")->Arg(5000);

BENCHMARK_MAIN();
