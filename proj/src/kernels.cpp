#include "cbench/kernels.hpp"

#include <exception>
#include <optional>

#include <fmt/format.h>

#ifdef CBENCH_HAS_OPENMP
#include <omp.h>
#endif

namespace cbench {

namespace {

PairScores score_pair(const std::string& candidate, const std::string& reference) {
  const metrics::Tokens c = metrics::tokenize(candidate);
  const metrics::Tokens r = metrics::tokenize(reference);
  if (c.empty() || r.empty()) return {};
  return {metrics::bleu(c, {r}, 1), metrics::bleu(c, {r}, 2), metrics::rouge_l(c, r)};
}

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw metrics::MetricError("candidate and reference counts differ");
}

// One record -> one slot; skip reasons go to the second slot.
struct BuildSlot {
  std::optional<TaskInstance> task;
  std::optional<SkipReport> skip;
};

BuildSlot build_one(const VideoRecord& record, const TaskConfig& cfg) {
  try {
    return {build_task(record, cfg), std::nullopt};
  } catch (const TaskSkipped& s) {
    return {std::nullopt, SkipReport{s.video_id(), s.reason()}};
  }
}

TaskBatch collect(std::vector<BuildSlot>& slots) {
  TaskBatch batch;
  for (auto& s : slots) {
    if (s.task) batch.tasks.push_back(std::move(*s.task));
    if (s.skip) batch.skipped.push_back(std::move(*s.skip));
  }
  return batch;
}

// Runs body(i) for i in [0, n) and rethrows the first exception after the
// loop; exceptions must not escape an OpenMP region.
template <typename Body>
void parallel_for(std::size_t n, Body body) {
  std::exception_ptr error;
#ifdef CBENCH_HAS_OPENMP
#pragma omp parallel for schedule(dynamic, 64)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#ifdef CBENCH_HAS_OPENMP
#pragma omp critical(cbench_kernel_error)
#endif
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

bool parallel_available() {
#ifdef CBENCH_HAS_OPENMP
  return true;
#else
  return false;
#endif
}

double ordered_sum(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

Answer random_answer(const TaskInstance& task, int trial, std::uint64_t seed) {
  SeededRng rng(derive_seed(seed, fmt::format("random:{}:{}", trial, task.task_id)));
  Answer a;
  a.parsed = true;
  std::vector<std::string> labels = task.labels();
  switch (task.kind) {
    case TaskKind::selection:
      rng.shuffle(labels);
      labels.resize(std::min<std::size_t>(2, labels.size()));
      a.labels = labels;
      break;
    case TaskKind::ranking:
      rng.shuffle(labels);
      a.labels = labels;
      break;
    case TaskKind::classification:
      for (const auto& l : labels) a.tiers[l] = static_cast<Tier>(rng.below(3));
      break;
    default:
      throw ConfigError("random baseline needs discriminative tasks, got " + std::string(to_string(task.kind)));
  }
  return a;
}

namespace serial {

std::vector<PairScores> score_pairs(const std::vector<std::string>& candidates,
                                    const std::vector<std::string>& references) {
  check_sizes(candidates.size(), references.size());
  std::vector<PairScores> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) out[i] = score_pair(candidates[i], references[i]);
  return out;
}

std::vector<double> weo_pairs(const std::vector<metrics::EntitySet>& generated,
                              const std::vector<metrics::EntitySet>& references,
                              const metrics::EntityWeights& weights) {
  check_sizes(generated.size(), references.size());
  std::vector<double> out(generated.size());
  for (std::size_t i = 0; i < generated.size(); ++i) out[i] = metrics::weo(generated[i], references[i], weights);
  return out;
}

std::vector<Answer> random_answers(const std::vector<TaskInstance>& tasks, int trials, std::uint64_t seed) {
  std::vector<Answer> out(tasks.size() * static_cast<std::size_t>(std::max(trials, 0)));
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = random_answer(tasks[j % tasks.size()], static_cast<int>(j / tasks.size()), seed);
  }
  return out;
}

TaskBatch build_tasks(const std::vector<VideoRecord>& records, const TaskConfig& cfg) {
  cfg.validate();
  std::vector<BuildSlot> slots(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) slots[i] = build_one(records[i], cfg);
  return collect(slots);
}

}  // namespace serial

namespace parallel {

std::vector<PairScores> score_pairs(const std::vector<std::string>& candidates,
                                    const std::vector<std::string>& references) {
  check_sizes(candidates.size(), references.size());
  std::vector<PairScores> out(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) { out[i] = score_pair(candidates[i], references[i]); });
  return out;
}

std::vector<double> weo_pairs(const std::vector<metrics::EntitySet>& generated,
                              const std::vector<metrics::EntitySet>& references,
                              const metrics::EntityWeights& weights) {
  check_sizes(generated.size(), references.size());
  std::vector<double> out(generated.size());
  parallel_for(generated.size(), [&](std::size_t i) { out[i] = metrics::weo(generated[i], references[i], weights); });
  return out;
}

std::vector<Answer> random_answers(const std::vector<TaskInstance>& tasks, int trials, std::uint64_t seed) {
  std::vector<Answer> out(tasks.size() * static_cast<std::size_t>(std::max(trials, 0)));
  parallel_for(out.size(), [&](std::size_t j) {
    out[j] = random_answer(tasks[j % tasks.size()], static_cast<int>(j / tasks.size()), seed);
  });
  return out;
}

TaskBatch build_tasks(const std::vector<VideoRecord>& records, const TaskConfig& cfg) {
  cfg.validate();
  std::vector<BuildSlot> slots(records.size());
  parallel_for(records.size(), [&](std::size_t i) { slots[i] = build_one(records[i], cfg); });
  return collect(slots);
}

}  // namespace parallel

}  // namespace cbench
