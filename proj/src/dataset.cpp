#include "cbench/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace cbench {

std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::god: return "god";
    case Tier::high: return "high";
    case Tier::ordinary: return "ordinary";
  }
  return "?";
}

std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::RT: return "RT";
    case Dimension::DA: return "DA";
    case Dimension::WT: return "WT";
    case Dimension::IV: return "IV";
    case Dimension::ER: return "ER";
  }
  return "?";
}

std::optional<Tier> parse_tier(std::string_view s) {
  std::string l = to_lower_ascii(trim(s));
  if (l == "god" || l == "god-level") return Tier::god;
  if (l == "high" || l == "high-quality") return Tier::high;
  if (l == "ordinary") return Tier::ordinary;
  return std::nullopt;
}

std::optional<Dimension> parse_dimension(std::string_view s) {
  for (Dimension d : {Dimension::RT, Dimension::DA, Dimension::WT, Dimension::IV, Dimension::ER}) {
    if (iequals_ascii(s, to_string(d))) return d;
  }
  return std::nullopt;
}

std::vector<const Comment*> VideoRecord::comments_of(Tier tier) const {
  std::vector<const Comment*> out;
  for (const auto& c : comments) {
    if (c.tier == tier) out.push_back(&c);
  }
  return out;
}

const Comment* VideoRecord::top_god() const {
  const Comment* best = nullptr;
  for (const auto& c : comments) {
    if (c.tier != Tier::god) continue;
    if (!best || c.likes > best->likes ||
        (c.likes == best->likes && c.comment_id < best->comment_id)) {
      best = &c;
    }
  }
  return best;
}

// --- Taxonomy -------------------------------------------------------------

Taxonomy Taxonomy::from_json(const json& j) {
  Taxonomy t;
  t.version_ = j.value("version", std::string("unversioned"));
  for (const auto& dim : j.at("dimensions")) {
    auto code = parse_dimension(dim.at("code").get<std::string>());
    if (!code) throw Error("taxonomy: unknown dimension code " + dim.at("code").dump());
    t.table_[*code] = dim.at("subcategories").get<std::vector<std::string>>();
  }
  if (j.contains("aliases")) {
    for (const auto& [alias, canonical] : j.at("aliases").items()) {
      t.aliases_[to_lower_ascii(alias)] = canonical.get<std::string>();
    }
  }
  if (j.contains("categories")) t.categories_ = j.at("categories").get<std::vector<std::string>>();
  return t;
}

Taxonomy Taxonomy::load(const std::string& path) {
  return from_json(json::parse(read_file(path)));
}

const Taxonomy& Taxonomy::builtin() {
  static const Taxonomy instance =
      from_json(json::parse(embedded_resource("data/taxonomy.json")));
  return instance;
}

bool Taxonomy::is_category(std::string_view name) const {
  return std::find(categories_.begin(), categories_.end(), name) != categories_.end();
}

std::optional<Dimension> Taxonomy::dimension_of(std::string_view subcategory) const {
  for (const auto& [dim, subs] : table_) {
    for (const auto& s : subs) {
      if (iequals_ascii(s, subcategory)) return dim;
    }
  }
  return std::nullopt;
}

ArtTag Taxonomy::parse_tag(std::string_view text) const {
  std::string needle = trim(text);
  for (const auto& [dim, subs] : table_) {
    for (const auto& s : subs) {
      if (iequals_ascii(s, needle)) return ArtTag{dim, s};
    }
  }
  auto alias = aliases_.find(to_lower_ascii(needle));
  if (alias != aliases_.end()) return parse_tag(alias->second);
  throw UnknownTagError("unknown Comment Art tag: \"" + needle + "\"");
}

const std::vector<std::string>& Taxonomy::subcategories(Dimension d) const {
  static const std::vector<std::string> empty;
  auto it = table_.find(d);
  return it == table_.end() ? empty : it->second;
}

std::size_t Taxonomy::subcategory_count() const {
  std::size_t n = 0;
  for (const auto& [dim, subs] : table_) n += subs.size();
  return n;
}

// --- Validation -----------------------------------------------------------

std::string ValidationReport::summary() const {
  std::vector<std::string> parts;
  for (const auto& v : violations) parts.push_back(v.field + ": " + v.rule);
  return join(parts, "; ");
}

bool ValidationReport::mentions(std::string_view rule_fragment) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) {
    return v.rule.find(rule_fragment) != std::string::npos;
  });
}

ValidationReport validate_record(const VideoRecord& r, const Taxonomy& taxonomy) {
  ValidationReport report;
  auto add = [&](std::string field, std::string rule) {
    report.violations.push_back({std::move(field), std::move(rule)});
  };
  if (r.video_id.empty()) add("video_id", "video_id non-empty");
  if (!(r.duration_s >= 0.0)) add("duration_s", "duration_s >= 0");
  if (!taxonomy.categories().empty() && !taxonomy.is_category(r.category)) {
    add("category", "category in taxonomy category list (got \"" + r.category + "\")");
  }
  std::set<std::string> ids;
  bool has_god = false;
  for (std::size_t i = 0; i < r.comments.size(); ++i) {
    const Comment& c = r.comments[i];
    std::string where = "comments[" + std::to_string(i) + "]";
    if (c.comment_id.empty()) add(where + ".comment_id", "comment_id non-empty");
    if (!ids.insert(c.comment_id).second) {
      add(where + ".comment_id", "comment_id unique within record (\"" + c.comment_id + "\")");
    }
    if (trim(c.text).empty()) add(where + ".text", "text non-empty");
    if (c.likes < 0) add(where + ".likes", "likes >= 0");
    if (c.tier == Tier::god) has_god = true;
    for (std::size_t t = 0; t < c.tags.size(); ++t) {
      const ArtTag& tag = c.tags[t];
      auto actual = taxonomy.dimension_of(tag.subcategory);
      std::string tag_where = where + ".tags[" + std::to_string(t) + "]";
      if (!actual) {
        add(tag_where, "unknown subcategory \"" + tag.subcategory + "\"");
      } else if (*actual != tag.dimension) {
        add(tag_where, "taxonomy mismatch: \"" + tag.subcategory + "\" belongs to " +
                           std::string(to_string(*actual)) + ", not " +
                           std::string(to_string(tag.dimension)));
      }
    }
  }
  if (!has_god) add("comments", "at least one god-tier comment");
  return report;
}

// --- Serialization --------------------------------------------------------

json to_json(const ArtTag& tag) {
  return json{{"dimension", to_string(tag.dimension)}, {"subcategory", tag.subcategory}};
}

json to_json(const Comment& c) {
  json tags = json::array();
  for (const auto& t : c.tags) tags.push_back(to_json(t));
  json j{{"comment_id", c.comment_id},
         {"text", c.text},
         {"likes", c.likes},
         {"tier", to_string(c.tier)},
         {"tags", tags}};
  if (!c.explanation.empty()) j["explanation"] = c.explanation;
  return j;
}

json to_json(const VideoRecord& r) {
  json comments = json::array();
  for (const auto& c : r.comments) comments.push_back(to_json(c));
  return json{{"video_id", r.video_id},       {"title", r.title},
              {"duration_s", r.duration_s},   {"category", r.category},
              {"subcategory", r.subcategory}, {"ocr_text", r.ocr_text},
              {"subtitle_text", r.subtitle_text},
              {"frame_paths", r.frame_paths}, {"comments", comments}};
}

namespace {

std::string optional_text(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  if (!j.at(key).is_string()) throw DatasetError(std::string("field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

const json& required(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) {
    throw DatasetError(std::string("missing required field '") + key + "'");
  }
  return j.at(key);
}

ArtTag tag_from_json(const json& j, const Taxonomy& taxonomy) {
  if (j.is_string()) {
    auto text = j.get<std::string>();
    try {
      return taxonomy.parse_tag(text);
    } catch (const UnknownTagError&) {
      // Keep it; validation reports it with the record's line.
      return ArtTag{Dimension::RT, text};
    }
  }
  if (!j.is_object()) throw DatasetError("tag must be a string or an object");
  auto dim = parse_dimension(required(j, "dimension").get<std::string>());
  if (!dim) throw DatasetError("unknown tag dimension " + j.at("dimension").dump());
  return ArtTag{*dim, required(j, "subcategory").get<std::string>()};
}

}  // namespace

VideoRecord record_from_json(const json& j, const Taxonomy& taxonomy) {
  if (!j.is_object()) throw DatasetError("record must be an object");
  try {
    VideoRecord r;
    r.video_id = required(j, "video_id").get<std::string>();
    r.title = optional_text(j, "title");
    if (j.contains("duration_s") && !j.at("duration_s").is_null()) {
      if (!j.at("duration_s").is_number()) throw DatasetError("duration_s must be a number");
      r.duration_s = j.at("duration_s").get<double>();
    }
    r.category = optional_text(j, "category");
    r.subcategory = optional_text(j, "subcategory");
    r.ocr_text = optional_text(j, "ocr_text");
    r.subtitle_text = optional_text(j, "subtitle_text");
    if (j.contains("frame_paths") && !j.at("frame_paths").is_null()) {
      r.frame_paths = j.at("frame_paths").get<std::vector<std::string>>();
    }
    const json& comments = required(j, "comments");
    if (!comments.is_array()) throw DatasetError("comments must be an array");
    for (const auto& cj : comments) {
      Comment c;
      c.comment_id = required(cj, "comment_id").get<std::string>();
      c.text = optional_text(cj, "text");
      const json& likes = required(cj, "likes");
      if (!likes.is_number_integer()) throw DatasetError("likes must be an integer");
      c.likes = likes.get<std::int64_t>();
      auto tier = parse_tier(required(cj, "tier").get<std::string>());
      if (!tier) throw DatasetError("unknown comment tier " + cj.at("tier").dump());
      c.tier = *tier;
      if (cj.contains("tags") && !cj.at("tags").is_null()) {
        for (const auto& tj : cj.at("tags")) c.tags.push_back(tag_from_json(tj, taxonomy));
      }
      c.explanation = optional_text(cj, "explanation");
      r.comments.push_back(std::move(c));
    }
    return r;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("type error: ") + e.what());
  }
}

LoadResult parse_dataset(std::string_view content, const Taxonomy& taxonomy) {
  LoadResult result;
  result.dataset.taxonomy_version = taxonomy.version();
  std::set<std::string> seen;
  auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (trim(lines[i]).empty()) continue;
    VideoRecord record;
    try {
      record = record_from_json(json::parse(lines[i]), taxonomy);
    } catch (const json::parse_error& e) {
      result.errors.push_back({line_no, std::string("malformed line: ") + e.what()});
      continue;
    } catch (const DatasetError& e) {
      result.errors.push_back({line_no, std::string("malformed record: ") + e.what()});
      continue;
    }
    auto report = validate_record(record, taxonomy);
    if (!report.ok()) {
      result.errors.push_back({line_no, "invalid record " + record.video_id + ": " + report.summary()});
      continue;
    }
    if (!seen.insert(record.video_id).second) {
      result.errors.push_back({line_no, "duplicate video_id " + record.video_id});
      continue;
    }
    result.dataset.records.push_back(std::move(record));
  }
  return result;
}

LoadResult load_dataset(const std::string& path, const Taxonomy& taxonomy) {
  std::string content;
  try {
    content = read_file(path);
  } catch (const Error& e) {
    throw DatasetError(e.what());
  }
  return parse_dataset(content, taxonomy);
}

std::string serialize_dataset(const Dataset& dataset) {
  std::string out;
  for (const auto& r : dataset.records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

// --- Splitting ------------------------------------------------------------

SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.validation = n / 12;
  s.test = n / 12;
  s.train = n - s.validation - s.test;
  return s;
}

namespace {

// Largest-remainder apportionment of `total` over groups in proportion to
// their sizes, never exceeding capacity[g].
std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes,
                                   const std::vector<std::size_t>& capacity,
                                   std::size_t total, std::size_t n) {
  std::vector<std::size_t> alloc(sizes.size(), 0);
  std::vector<std::size_t> remainder(sizes.size(), 0);
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const std::size_t num = sizes[g] * total;
    alloc[g] = std::min(num / n, capacity[g]);
    remainder[g] = num % n;
    assigned += alloc[g];
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  while (assigned < total) {
    bool progressed = false;
    for (std::size_t g : order) {
      if (assigned == total) break;
      if (alloc[g] < capacity[g]) {
        ++alloc[g];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return alloc;
}

}  // namespace

DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed) {
  DatasetSplit out;
  const std::size_t n = dataset.records.size();
  if (n == 0) return out;

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[dataset.records[i].category].push_back(i);

  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> sizes;
  for (auto& [category, idx] : groups) {
    SeededRng rng(derive_seed(seed, "split:" + category));
    rng.shuffle(idx);
    sizes.push_back(idx.size());
    members.push_back(idx);
  }

  const SplitSizes target = split_sizes(n);
  auto val = apportion(sizes, sizes, target.validation, n);
  std::vector<std::size_t> remaining(sizes.size());
  for (std::size_t g = 0; g < sizes.size(); ++g) remaining[g] = sizes[g] - val[g];
  auto test = apportion(sizes, remaining, target.test, n);

  std::vector<int> part(n, 0);  // 0 train, 1 validation, 2 test
  for (std::size_t g = 0; g < members.size(); ++g) {
    for (std::size_t k = 0; k < val[g]; ++k) part[members[g][k]] = 1;
    for (std::size_t k = 0; k < test[g]; ++k) part[members[g][val[g] + k]] = 2;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = dataset.records[i];
    (part[i] == 0 ? out.train : part[i] == 1 ? out.validation : out.test).push_back(r);
  }
  return out;
}

json DatasetSplit::manifest() const {
  auto ids = [](const std::vector<VideoRecord>& rs) {
    json a = json::array();
    for (const auto& r : rs) a.push_back(r.video_id);
    return a;
  };
  return json{{"train", ids(train)}, {"validation", ids(validation)}, {"test", ids(test)}};
}

}  // namespace cbench
