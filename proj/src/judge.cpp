#include "cbench/judge.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "cbench/xml.hpp"

namespace cbench::judge {

namespace {

class SchemaError : public Error {
 public:
  using Error::Error;
};

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2FFFF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x3040 && c <= 0x30FF) || (c >= 0xAC00 && c <= 0xD7AF);
}

bool is_word_char(char32_t c) {
  if (c < 0x80) return std::isalnum(static_cast<int>(c)) || c == '\'' || c == '-';
  if ((c >= 0x2000 && c <= 0x206F) || (c >= 0x3000 && c <= 0x303F) || (c >= 0xFF00 && c <= 0xFF65) ||
      (c >= 0x80 && c <= 0xBF) || (c >= 0x1F000 && c <= 0x1FAFF) || (c >= 0x2600 && c <= 0x27BF)) {
    return false;
  }
  return !is_cjk(c);
}

std::vector<double> parse_scores(const std::string& raw, const std::vector<std::string>& criteria) {
  const xml::Node node = xml::parse_block(raw, "scores");
  std::vector<double> out;
  for (const auto& c : criteria) {
    const xml::Node* n = node.child(c);
    if (!n) throw SchemaError("missing <" + c + "> score");
    double v = 0;
    auto [p, ec] = std::from_chars(n->text.data(), n->text.data() + n->text.size(), v);
    if (ec != std::errc() || p != n->text.data() + n->text.size() || !std::isfinite(v)) {
      throw SchemaError(fmt::format("{} score '{}' is not a number", c, n->text));
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> parse_entity_list(const std::string& raw) {
  try {
    const xml::Node node = xml::parse_block(raw, "entities");
    std::vector<std::string> out;
    for (const auto* e : node.children_named("entity")) out.push_back(e->text);
    return out;
  } catch (const xml::ParseError&) {
  }
  const auto open = raw.find('['), close = raw.rfind(']');
  if (open != std::string::npos && close != std::string::npos && close > open) {
    const json j = json::parse(raw.substr(open, close - open + 1), nullptr, false);
    if (j.is_array() && std::all_of(j.begin(), j.end(), [](const json& x) { return x.is_string(); })) {
      return j.get<std::vector<std::string>>();
    }
  }
  throw SchemaError("no <entities> block or JSON list of strings");
}

}  // namespace

json CriterionScores::to_json() const {
  return {{"task_kind", to_string(task_kind)}, {"criteria", criteria},          {"scores", scores},
          {"weights", weights},                {"composite_raw", composite_raw}, {"composite_norm", composite_norm},
          {"clamped", clamped},                {"raw_text", raw_text}};
}

CriterionScores CriterionScores::from_json(const json& j) {
  CriterionScores s;
  s.task_kind = parse_task_kind(j.at("task_kind").get<std::string>()).value_or(TaskKind::explanation);
  s.criteria = j.at("criteria").get<std::vector<std::string>>();
  s.scores = j.at("scores").get<std::vector<double>>();
  s.weights = j.at("weights").get<std::vector<double>>();
  s.composite_raw = j.at("composite_raw").get<double>();
  s.composite_norm = j.at("composite_norm").get<double>();
  s.clamped = j.value("clamped", std::vector<std::string>{});
  s.raw_text = j.value("raw_text", std::string());
  return s;
}

const std::vector<std::string>& explanation_criteria() {
  static const std::vector<std::string> c = {"precision", "reasonableness", "completeness", "relevance", "clarity"};
  return c;
}
const std::vector<double>& explanation_weights() {
  static const std::vector<double> w = {5, 3, 2, 2, 1};
  return w;
}
const std::vector<std::string>& creation_criteria() {
  static const std::vector<std::string> c = {"creativity", "quality", "style", "impact"};
  return c;
}
const std::vector<double>& creation_weights() {
  static const std::vector<double> w = {1, 1, 1, 1};
  return w;
}

CriterionScores compose(TaskKind kind, const std::vector<double>& raw_scores) {
  CriterionScores s;
  s.task_kind = kind;
  if (kind == TaskKind::explanation) {
    s.criteria = explanation_criteria();
    s.weights = explanation_weights();
  } else if (kind == TaskKind::creation) {
    s.criteria = creation_criteria();
    s.weights = creation_weights();
  } else {
    throw ConfigError("judge scores exist only for explanation and creation tasks");
  }
  if (raw_scores.size() != s.criteria.size()) {
    throw ConfigError(fmt::format("expected {} criterion scores, got {}", s.criteria.size(), raw_scores.size()));
  }
  double wsum = 0;
  for (std::size_t i = 0; i < raw_scores.size(); ++i) {
    const double v = std::clamp(raw_scores[i], 0.0, 5.0);
    if (v != raw_scores[i]) s.clamped.push_back(s.criteria[i]);
    s.scores.push_back(v);
    s.composite_raw += s.weights[i] * v;
    wsum += s.weights[i];
  }
  s.composite_norm = s.composite_raw / (5.0 * wsum);
  return s;
}

std::string_view to_string(ExtractionMode m) { return m == ExtractionMode::online ? "online" : "offline"; }

const std::set<std::string>& default_stoplist() {
  static const std::set<std::string> s = {
      // English
      "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with", "from",
      "as", "is", "are", "was", "were", "be", "been", "am", "it", "its", "this", "that", "these", "those",
      "i", "me", "my", "you", "your", "he", "him", "his", "she", "her", "we", "us", "our", "they", "them",
      "their", "so", "not", "no", "do", "does", "did", "just", "very", "too", "can", "will", "would", "there",
      "here", "what", "who", "how", "why", "when", "all", "some", "any", "up", "out", "than", "then",
      // Chinese function characters
      "的", "了", "是", "在", "我", "你", "他", "她", "它", "们", "这", "那", "就", "都", "也", "和", "与",
      "吗", "呢", "吧", "啊", "呀", "哈", "嘛", "哦", "不", "很", "有", "被", "把", "给", "着", "过", "个",
      "还", "又", "说", "要", "会", "让", "得", "地", "之", "而", "才", "却", "么", "啦", "哎", "嗯"};
  return s;
}

EntityExtraction extract_entities_offline(std::string_view comment, const std::set<std::string>& stoplist) {
  std::vector<std::string> pieces;
  std::string cur;
  bool cur_cjk = false;
  auto flush = [&] {
    if (!cur.empty()) pieces.push_back(cur);
    cur.clear();
  };
  for (char32_t c : decode_utf8(comment)) {
    if (is_cjk(c)) {
      const std::string ch = encode_utf8(c);
      if (!cur_cjk) flush();
      cur_cjk = true;
      if (stoplist.count(ch)) flush();
      else cur += ch;
    } else if (is_word_char(c)) {
      if (cur_cjk) flush();
      cur_cjk = false;
      cur += encode_utf8(c);
    } else {
      flush();
    }
  }
  flush();

  EntityExtraction out;
  out.mode = ExtractionMode::offline;
  for (const auto& p : pieces) {
    std::string n = metrics::normalize_entity(p);
    if (!n.empty() && !stoplist.count(n)) out.entities.insert(std::move(n));
  }
  out.empty = out.entities.empty();
  return out;
}

Judge::Judge(Gateway& gateway, Options options, PromptPack prompts)
    : gateway_(gateway), options_(std::move(options)), prompts_(std::move(prompts)) {}

template <typename T, typename ParseFn>
T Judge::ask(const std::string& phase, const std::string& prompt, ParseFn parse, std::string& raw) {
  std::string error;
  for (int attempt = 1; attempt <= 1 + options_.retries; ++attempt) {
    std::string text = prompt;
    if (attempt > 1) text += "\n\n" + prompts_.render("repair", {{"error", error}, {"previous", raw}});
    ModelRequest req;
    req.model_id = options_.model_id;
    req.parts.push_back(ContentPart::of_text(text));
    req.temperature = options_.temperature;
    req.max_tokens = options_.max_tokens;
    req.metadata["phase"] = phase;
    raw = gateway_.complete(req).text;
    try {
      return parse(raw);
    } catch (const SchemaError& e) {
      error = e.what();
    } catch (const xml::ParseError& e) {
      error = e.what();
    }
  }
  throw JudgeError(phase + ": unusable judge output: " + error, raw);
}

CriterionScores Judge::judge_explanation(const std::vector<std::string>& predicted_tags,
                                         const std::string& predicted_text,
                                         const std::vector<std::string>& gold_tags, const std::string& gold_text) {
  if (trim(gold_text).empty()) throw ConfigError("judge_explanation needs a gold explanation");
  const std::string prompt = prompts_.render("judge_explanation", {{"predicted_tags", join(predicted_tags, ", ")},
                                                                   {"predicted_text", predicted_text},
                                                                   {"gold_tags", join(gold_tags, ", ")},
                                                                   {"gold_text", gold_text}});
  std::string raw;
  auto scores = ask<std::vector<double>>(
      "judge.explanation", prompt, [](const std::string& r) { return parse_scores(r, explanation_criteria()); }, raw);
  CriterionScores s = compose(TaskKind::explanation, scores);
  s.raw_text = raw;
  return s;
}

CriterionScores Judge::judge_creation(const std::string& comment, const std::string& reference,
                                      const std::string& video_context) {
  if (trim(reference).empty()) throw ConfigError("judge_creation needs a reference comment");
  const std::string prompt = prompts_.render(
      "judge_creation", {{"video_context", video_context}, {"comment", comment}, {"reference", reference}});
  std::string raw;
  auto scores = ask<std::vector<double>>(
      "judge.creation", prompt, [](const std::string& r) { return parse_scores(r, creation_criteria()); }, raw);
  CriterionScores s = compose(TaskKind::creation, scores);
  s.raw_text = raw;
  return s;
}

EntityExtraction Judge::extract_entities(const std::string& comment) {
  if (trim(comment).empty()) throw ConfigError("extract_entities needs a non-empty comment");
  const std::string prompt = prompts_.render("entity_extraction", {{"comment", comment}});
  EntityExtraction out;
  out.mode = ExtractionMode::online;
  auto names = ask<std::vector<std::string>>("judge.entities", prompt, parse_entity_list, out.raw_text);
  out.entities = metrics::make_entity_set(names);
  out.empty = out.entities.empty();
  return out;
}

}  // namespace cbench::judge
