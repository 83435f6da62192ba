#include "cbench/answer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "cbench/metrics.hpp"
#include "cbench/xml.hpp"

namespace cbench {

namespace {

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Valid labels that stand alone (no ASCII letter/digit on either side), in
// order of appearance.
std::vector<std::string> standalone_labels(std::string_view text, const std::vector<std::string>& labels) {
  const std::set<std::string> valid(labels.begin(), labels.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!std::isupper(static_cast<unsigned char>(text[i]))) continue;
    if (i > 0 && alnum(text[i - 1])) continue;
    if (i + 1 < text.size() && alnum(text[i + 1])) continue;
    std::string l(1, text[i]);
    if (valid.count(l)) out.push_back(l);
  }
  return out;
}

std::vector<std::string> distinct(const std::vector<std::string>& xs) {
  std::vector<std::string> out;
  for (const auto& x : xs) {
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  }
  return out;
}

std::optional<std::string> block(const std::string& raw, std::string_view name) {
  try {
    return xml::parse_block(raw, name).text;
  } catch (const xml::ParseError&) {
    return std::nullopt;
  }
}

bool parse_selection(std::string_view text, const std::vector<std::string>& labels, Answer& a) {
  auto picks = distinct(standalone_labels(text, labels));
  if (picks.empty()) return false;
  if (picks.size() > 2) picks.resize(2);
  a.labels = picks;
  return true;
}

bool parse_ranking(std::string_view text, const std::vector<std::string>& labels, Answer& a) {
  auto order = distinct(standalone_labels(text, labels));
  if (order.size() != labels.size()) return false;
  a.labels = order;
  return true;
}

bool parse_tiers(std::string_view text, const std::vector<std::string>& labels, Answer& a) {
  const std::set<std::string> valid(labels.begin(), labels.end());
  std::map<std::string, Tier> tiers;
  for (const auto& raw_line : split_lines(text)) {
    std::string line = trim(raw_line);
    while (!line.empty() && (line[0] == '-' || line[0] == '*')) line = trim(line.substr(1));
    if (line.size() < 2 || !valid.count(line.substr(0, 1)) || alnum(line[1])) continue;
    std::string rest = to_lower_ascii(line.substr(1));
    std::size_t p = 0;
    while (p < rest.size() && !std::isalpha(static_cast<unsigned char>(rest[p]))) ++p;
    rest = rest.substr(p);
    std::optional<Tier> tier;
    for (Tier t : {Tier::god, Tier::high, Tier::ordinary}) {
      if (rest.rfind(to_string(t), 0) == 0) tier = t;
    }
    if (!tier) continue;
    auto [it, inserted] = tiers.emplace(line.substr(0, 1), *tier);
    if (!inserted && it->second != *tier) return false;  // contradictory
  }
  if (tiers.size() != labels.size()) return false;
  a.tiers = std::move(tiers);
  return true;
}

bool parse_scores(std::string_view text, const std::vector<std::string>& labels, Answer& a) {
  const std::set<std::string> valid(labels.begin(), labels.end());
  std::map<std::string, int> scores;
  for (const auto& raw_line : split_lines(text)) {
    std::string line = trim(raw_line);
    if (line.size() < 2 || !valid.count(line.substr(0, 1)) || alnum(line[1])) continue;
    auto digit = std::find_if(line.begin() + 1, line.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    if (digit == line.end()) continue;
    const int v = *digit - '0';
    if (v < 1 || v > 5) return false;
    scores[line.substr(0, 1)] = v;
  }
  if (scores.size() != labels.size()) return false;
  a.scores = std::move(scores);
  return true;
}

std::vector<std::string> split_tags(std::string_view s) {
  std::string norm(s);
  for (const char* sep : {"，", "、", "；"}) {
    std::size_t p;
    while ((p = norm.find(sep)) != std::string::npos) norm.replace(p, std::string_view(sep).size(), ",");
  }
  std::vector<std::string> out;
  std::string cur;
  for (char c : norm) {
    if (c == ',' || c == ';' || c == '\n') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  for (auto& t : out) {
    try {
      t = Taxonomy::builtin().parse_tag(t).subcategory;
    } catch (const UnknownTagError&) {
      // kept verbatim; the judge sees what the model wrote
    }
  }
  return out;
}

}  // namespace

json Answer::to_json() const {
  json j = {{"parsed", parsed}};
  if (!labels.empty()) j["labels"] = labels;
  if (!tiers.empty()) {
    json t = json::object();
    for (const auto& [l, tier] : tiers) t[l] = to_string(tier);
    j["tiers"] = t;
  }
  if (!tags.empty()) j["tags"] = tags;
  if (!text.empty()) j["text"] = text;
  if (!scores.empty()) j["scores"] = scores;
  return j;
}

Answer Answer::from_json(const json& j) {
  Answer a;
  a.parsed = j.value("parsed", false);
  a.labels = j.value("labels", std::vector<std::string>{});
  if (j.contains("tiers")) {
    for (const auto& [l, t] : j.at("tiers").items()) {
      auto tier = parse_tier(t.get<std::string>());
      if (!tier) throw Error("unknown tier '" + t.get<std::string>() + "'");
      a.tiers[l] = *tier;
    }
  }
  a.tags = j.value("tags", std::vector<std::string>{});
  a.text = j.value("text", std::string());
  a.scores = j.value("scores", std::map<std::string, int>{});
  return a;
}

Answer parse_answer(TaskKind kind, const std::string& raw, const std::vector<std::string>& labels) {
  Answer a;
  switch (kind) {
    case TaskKind::selection:
    case TaskKind::ranking:
    case TaskKind::classification:
    case TaskKind::preference: {
      auto parse = [&](std::string_view text) {
        switch (kind) {
          case TaskKind::selection: return parse_selection(text, labels, a);
          case TaskKind::ranking: return parse_ranking(text, labels, a);
          case TaskKind::classification: return parse_tiers(text, labels, a);
          default: return parse_scores(text, labels, a);
        }
      };
      auto strict = block(raw, "answer");
      a.parsed = (strict && parse(*strict)) || parse(raw);
      break;
    }
    case TaskKind::explanation: {
      auto tags = block(raw, "tags");
      auto body = block(raw, "explanation");
      if (tags) a.tags = split_tags(*tags);
      a.text = body ? *body : (tags ? std::string() : trim(raw));
      a.parsed = !a.text.empty() || !a.tags.empty();
      break;
    }
    case TaskKind::creation: {
      auto body = block(raw, "comment");
      a.text = body ? *body : trim(raw);
      a.parsed = !a.text.empty();
      break;
    }
  }
  if (!a.parsed) {
    a.labels.clear();
    a.tiers.clear();
    a.scores.clear();
  }
  return a;
}

std::map<std::string, double> score_discriminative(const TaskInstance& task, const Answer& a) {
  std::map<std::string, double> m;
  const auto& key = task.key;
  switch (task.kind) {
    case TaskKind::selection: {
      const bool ok = a.parsed && !a.labels.empty();
      m["accuracy"] = ok && a.labels[0] == key.correct_label ? 1.0 : 0.0;
      bool in_top2 = false;
      for (std::size_t i = 0; ok && i < std::min<std::size_t>(2, a.labels.size()); ++i) {
        in_top2 = in_top2 || a.labels[i] == key.correct_label;
      }
      m["top2"] = in_top2 ? 1.0 : 0.0;
      break;
    }
    case TaskKind::ranking: {
      const bool ok = a.parsed && a.labels.size() == key.reference_order.size();
      m["ndcg"] = ok ? metrics::ndcg(a.labels, key.reference_order) : 0.0;
      m["ema"] = ok && a.labels == key.reference_order ? 1.0 : 0.0;
      break;
    }
    case TaskKind::classification: {
      double right = 0;
      if (a.parsed) {
        for (const auto& [label, tier] : key.tiers) {
          auto it = a.tiers.find(label);
          right += it != a.tiers.end() && it->second == tier ? 1.0 : 0.0;
        }
      }
      m["ema"] = a.parsed && a.tiers == key.tiers ? 1.0 : 0.0;
      m["tier_accuracy"] = key.tiers.empty() ? 0.0 : right / static_cast<double>(key.tiers.size());
      break;
    }
    default:
      throw ConfigError("score_discriminative: not a discriminative task");
  }
  return m;
}

}  // namespace cbench
