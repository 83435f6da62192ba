#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbench/answer.hpp"
#include "cbench/metrics.hpp"
#include "cbench/tasks.hpp"

// Corpus-scale loops. Every kernel exists twice with identical signatures:
// cbench::serial is the reference, cbench::parallel spreads the same
// per-item work over OpenMP threads. Items are independent and results land
// in input order, so both produce identical output.

namespace cbench {

struct PairScores {
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  bool operator==(const PairScores&) const = default;
};

/// True when the parallel kernels were compiled with OpenMP.
bool parallel_available();

/// Left-to-right sum, so aggregates do not depend on which kernel ran.
double ordered_sum(const std::vector<double>& xs);

namespace serial {
/// BLEU-1/2 and ROUGE-L per pair; an empty candidate or reference scores 0.
std::vector<PairScores> score_pairs(const std::vector<std::string>& candidates,
                                    const std::vector<std::string>& references);
std::vector<double> weo_pairs(const std::vector<metrics::EntitySet>& generated,
                              const std::vector<metrics::EntitySet>& references,
                              const metrics::EntityWeights& weights);
/// Uniform random answers, trial-major: entry t * tasks.size() + i.
std::vector<Answer> random_answers(const std::vector<TaskInstance>& tasks, int trials, std::uint64_t seed);
/// One task per record, in record order; records that cannot yield one are
/// reported in `skipped`.
TaskBatch build_tasks(const std::vector<VideoRecord>& records, const TaskConfig& cfg);
}  // namespace serial

namespace parallel {
std::vector<PairScores> score_pairs(const std::vector<std::string>& candidates,
                                    const std::vector<std::string>& references);
std::vector<double> weo_pairs(const std::vector<metrics::EntitySet>& generated,
                              const std::vector<metrics::EntitySet>& references,
                              const metrics::EntityWeights& weights);
std::vector<Answer> random_answers(const std::vector<TaskInstance>& tasks, int trials, std::uint64_t seed);
TaskBatch build_tasks(const std::vector<VideoRecord>& records, const TaskConfig& cfg);
}  // namespace parallel

/// The random answer for one (trial, task); both kernels call this.
Answer random_answer(const TaskInstance& task, int trial, std::uint64_t seed);

}  // namespace cbench
