#pragma once

#include <map>
#include <string>
#include <vector>

#include "cbench/tasks.hpp"

namespace cbench {

/// A parsed model (or human) answer. Only the fields for the task's kind
/// are set.
struct Answer {
  bool parsed = false;
  /// Selection: picks, best first (one or two). Ranking: the full order.
  std::vector<std::string> labels;
  std::map<std::string, Tier> tiers;          // classification
  std::vector<std::string> tags;              // explanation
  std::string text;                           // explanation body or created comment
  std::map<std::string, int> scores;          // preference: label -> 1..5

  bool operator==(const Answer&) const = default;
  json to_json() const;
  static Answer from_json(const json& j);
};

/// Strict-then-lenient extraction. The strict pass reads the <answer> (or
/// <comment>, <tags>/<explanation>) block; the lenient pass scans the whole
/// text. Unusable answers come back with parsed = false.
///
///   selection       first standalone capital label, then a second distinct one
///   ranking         every label exactly once, in order of first appearance
///   classification  "A: god" lines covering every label
Answer parse_answer(TaskKind kind, const std::string& raw, const std::vector<std::string>& labels);

/// Per-task metric fields. Selection: accuracy, top2. Ranking: ndcg, ema.
/// Classification: ema, tier_accuracy. An unparsed answer scores 0
/// everywhere.
std::map<std::string, double> score_discriminative(const TaskInstance& task, const Answer& answer);

}  // namespace cbench
