#pragma once

#include <set>
#include <string>
#include <vector>

#include "cbench/gateway.hpp"
#include "cbench/metrics.hpp"
#include "cbench/prompts.hpp"
#include "cbench/tasks.hpp"

namespace cbench::judge {

/// The judge's answer never fit the score schema, even after the repair
/// re-ask.
class JudgeError : public Error {
 public:
  JudgeError(const std::string& message, std::string raw) : Error(message), raw_(std::move(raw)) {}
  const std::string& raw_text() const { return raw_; }

 private:
  std::string raw_;
};

struct CriterionScores {
  TaskKind task_kind = TaskKind::explanation;
  std::vector<std::string> criteria;
  std::vector<double> scores;  // clamped to [0, 5]
  std::vector<double> weights;
  double composite_raw = 0.0;
  double composite_norm = 0.0;
  /// Criteria whose parsed score fell outside [0, 5].
  std::vector<std::string> clamped;
  std::string raw_text;

  json to_json() const;
  static CriterionScores from_json(const json& j);
};

/// precision, reasonableness, completeness, relevance, clarity.
const std::vector<std::string>& explanation_criteria();
const std::vector<double>& explanation_weights();
/// creativity, quality, style, impact.
const std::vector<std::string>& creation_criteria();
const std::vector<double>& creation_weights();

/// Clamps, then composite_raw = sum w_i s_i and
/// composite_norm = composite_raw / (5 sum w_i).
CriterionScores compose(TaskKind kind, const std::vector<double>& raw_scores);

enum class ExtractionMode { online, offline };
std::string_view to_string(ExtractionMode m);

struct EntityExtraction {
  metrics::EntitySet entities;
  ExtractionMode mode = ExtractionMode::offline;
  bool empty = false;
  std::string raw_text;
};

/// English function words plus common Chinese function characters.
const std::set<std::string>& default_stoplist();

/// Maximal word runs (Latin) and maximal Han/kana/hangul runs, with
/// stoplisted words dropped and stoplisted CJK characters acting as
/// separators; then normalized.
EntityExtraction extract_entities_offline(std::string_view comment,
                                          const std::set<std::string>& stoplist = default_stoplist());

struct Options {
  std::string model_id;
  double temperature = 0.0;
  int retries = 1;
  int max_tokens = 512;
};

class Judge {
 public:
  Judge(Gateway& gateway, Options options = {}, PromptPack prompts = PromptPack::builtin());

  CriterionScores judge_explanation(const std::vector<std::string>& predicted_tags,
                                    const std::string& predicted_text,
                                    const std::vector<std::string>& gold_tags, const std::string& gold_text);
  CriterionScores judge_creation(const std::string& comment, const std::string& reference,
                                 const std::string& video_context = {});
  /// One extraction call; the answer may be an <entities> block or a JSON
  /// list of strings.
  EntityExtraction extract_entities(const std::string& comment);

 private:
  template <typename T, typename ParseFn>
  T ask(const std::string& phase, const std::string& prompt, ParseFn parse, std::string& raw);

  Gateway& gateway_;
  Options options_;
  PromptPack prompts_;
};

}  // namespace cbench::judge
