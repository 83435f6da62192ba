#include "cbench/tasks.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace cbench {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::selection: return "selection";
    case TaskKind::ranking: return "ranking";
    case TaskKind::classification: return "classification";
    case TaskKind::explanation: return "explanation";
    case TaskKind::creation: return "creation";
    case TaskKind::preference: return "preference";
  }
  return "?";
}

std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (TaskKind k : {TaskKind::selection, TaskKind::ranking, TaskKind::classification,
                     TaskKind::explanation, TaskKind::creation, TaskKind::preference}) {
    if (iequals_ascii(s, to_string(k))) return k;
  }
  return std::nullopt;
}

bool is_discriminative(TaskKind k) {
  return k == TaskKind::selection || k == TaskKind::ranking || k == TaskKind::classification;
}

std::string_view to_string(FewShotSource s) {
  switch (s) {
    case FewShotSource::category: return "category";
    case FewShotSource::tag: return "tag";
    case FewShotSource::all: return "all";
  }
  return "?";
}

std::string TaskConfig::label() const {
  return "[1," + std::to_string(high_count) + "," + std::to_string(ordinary_count) + "]";
}

void TaskConfig::validate() const {
  if (high_count < 0 || ordinary_count < 0) throw ConfigError("task config counts must be >= 0");
  switch (kind) {
    case TaskKind::selection:
      if (high_count + ordinary_count < 1) {
        throw ConfigError("selection needs at least one distractor");
      }
      if (high_count + ordinary_count + 1 > 26) throw ConfigError("selection supports at most 26 options");
      break;
    case TaskKind::ranking:
      if (high_count != 4 || ordinary_count != 0) throw ConfigError("ranking is fixed at [1,4,0]");
      break;
    case TaskKind::classification:
      if (high_count != 3 || ordinary_count != 5) {
        throw ConfigError("classification is fixed at [1,3,5]");
      }
      break;
    default:
      break;
  }
}

std::string option_label(std::size_t index) {
  if (index >= 26) throw ConfigError("option index out of label range");
  return std::string(1, static_cast<char>('A' + index));
}

std::vector<std::string> TaskInstance::labels() const {
  std::vector<std::string> out;
  for (const auto& o : options) out.push_back(o.label);
  return out;
}

// --- (de)serialization ----------------------------------------------------

json TaskInstance::to_json() const {
  json opts = json::array();
  for (const auto& o : options) {
    opts.push_back({{"label", o.label}, {"text", o.text}});
  }
  json shots = json::array();
  for (const auto& f : fewshot) {
    shots.push_back({{"video_id", f.video_id},
                     {"comment_id", f.comment_id},
                     {"text", f.text},
                     {"likes", f.likes}});
  }
  return json{{"task_id", task_id},
              {"video_id", video_id},
              {"kind", to_string(kind)},
              {"config", config},
              {"context",
               {{"title", context.title},
                {"category", context.category},
                {"duration_s", context.duration_s},
                {"ocr_text", context.ocr_text},
                {"subtitle_text", context.subtitle_text},
                {"frame_paths", context.frame_paths}}},
              {"options", opts},
              {"fewshot", shots}};
}

json TaskInstance::key_json() const {
  json j{{"task_id", task_id}, {"kind", to_string(kind)}};
  // Source comment ids can hint at tiers, so they live with the key.
  json ids = json::object();
  for (const auto& o : options) {
    if (!o.comment_id.empty()) ids[o.label] = o.comment_id;
  }
  if (!ids.empty()) j["comment_ids"] = ids;
  json dims = json::array();
  for (Dimension d : key.dimensions) dims.push_back(to_string(d));
  j["dimensions"] = dims;
  switch (kind) {
    case TaskKind::selection:
      j["correct_label"] = key.correct_label;
      break;
    case TaskKind::ranking:
      j["reference_order"] = key.reference_order;
      break;
    case TaskKind::classification: {
      json tiers = json::object();
      for (const auto& [label, tier] : key.tiers) tiers[label] = to_string(tier);
      j["tiers"] = tiers;
      break;
    }
    case TaskKind::explanation: {
      json tags = json::array();
      for (const auto& t : key.gold_tags) tags.push_back(cbench::to_json(t));
      j["gold_tags"] = tags;
      j["gold_explanation"] = key.gold_explanation;
      break;
    }
    case TaskKind::creation:
      j["reference_text"] = key.reference_text;
      break;
    case TaskKind::preference:
      j["sources"] = key.sources;
      break;
  }
  return j;
}

TaskInstance task_from_json(const json& j) {
  TaskInstance t;
  t.task_id = j.at("task_id").get<std::string>();
  t.video_id = j.at("video_id").get<std::string>();
  auto kind = parse_task_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error("unknown task kind " + j.at("kind").dump());
  t.kind = *kind;
  t.config = j.value("config", std::string());
  if (j.contains("context")) {
    const auto& c = j.at("context");
    t.context.title = c.value("title", std::string());
    t.context.category = c.value("category", std::string());
    t.context.duration_s = c.value("duration_s", 0.0);
    t.context.ocr_text = c.value("ocr_text", std::string());
    t.context.subtitle_text = c.value("subtitle_text", std::string());
    t.context.frame_paths = c.value("frame_paths", std::vector<std::string>{});
  }
  for (const auto& o : j.value("options", json::array())) {
    t.options.push_back({o.at("label").get<std::string>(), o.value("comment_id", std::string()),
                         o.at("text").get<std::string>()});
  }
  for (const auto& f : j.value("fewshot", json::array())) {
    t.fewshot.push_back({f.value("video_id", std::string()), f.value("comment_id", std::string()),
                         f.at("text").get<std::string>(), f.value("likes", std::int64_t{0})});
  }
  return t;
}

AnswerKey key_from_json(const json& j, TaskKind kind) {
  AnswerKey k;
  for (const auto& d : j.value("dimensions", json::array())) {
    if (auto dim = parse_dimension(d.get<std::string>())) k.dimensions.push_back(*dim);
  }
  switch (kind) {
    case TaskKind::selection:
      k.correct_label = j.at("correct_label").get<std::string>();
      break;
    case TaskKind::ranking:
      k.reference_order = j.at("reference_order").get<std::vector<std::string>>();
      break;
    case TaskKind::classification:
      for (const auto& [label, tier] : j.at("tiers").items()) {
        auto t = parse_tier(tier.get<std::string>());
        if (!t) throw Error("unknown tier in key: " + tier.dump());
        k.tiers[label] = *t;
      }
      break;
    case TaskKind::explanation:
      for (const auto& tj : j.at("gold_tags")) {
        auto dim = parse_dimension(tj.at("dimension").get<std::string>());
        if (!dim) throw Error("unknown dimension in key");
        k.gold_tags.push_back({*dim, tj.at("subcategory").get<std::string>()});
      }
      k.gold_explanation = j.value("gold_explanation", std::string());
      break;
    case TaskKind::creation:
      k.reference_text = j.at("reference_text").get<std::string>();
      break;
    case TaskKind::preference:
      k.sources = j.at("sources").get<std::map<std::string, std::string>>();
      break;
  }
  return k;
}

// --- construction ---------------------------------------------------------

TaskContext context_of(const VideoRecord& r) {
  return {r.title, r.category, r.duration_s, r.ocr_text, r.subtitle_text, r.frame_paths};
}

std::string describe_context(const TaskContext& c) {
  std::string out;
  auto line = [&](std::string_view label, const std::string& value) {
    if (value.empty()) return;
    out += label;
    out += ": ";
    out += value;
    out += '\n';
  };
  line("Title", c.title);
  line("Category", c.category);
  if (c.duration_s > 0) line("Duration", fmt::format("{:g} s", c.duration_s));
  line("On-screen text", c.ocr_text);
  line("Subtitles", c.subtitle_text);
  if (!out.empty()) out.pop_back();
  return out;
}

namespace {

std::vector<Dimension> dimensions_of(const Comment& c) {
  std::vector<Dimension> dims;
  for (const auto& t : c.tags) {
    if (std::find(dims.begin(), dims.end(), t.dimension) == dims.end()) dims.push_back(t.dimension);
  }
  std::sort(dims.begin(), dims.end());
  return dims;
}

bool liked_before(const Comment* a, const Comment* b) {
  if (a->likes != b->likes) return a->likes > b->likes;
  return a->comment_id < b->comment_id;
}

// High-tier distractors come from the like-ordered top of the tier: the pool
// is the 2m most-liked highs, and m of them are drawn with the seed.
std::vector<const Comment*> draw_highs(const VideoRecord& r, int m, SeededRng& rng) {
  auto highs = r.comments_of(Tier::high);
  if (static_cast<int>(highs.size()) < m) {
    throw TaskSkipped(r.video_id, "insufficient high comments: need " + std::to_string(m) +
                                      ", have " + std::to_string(highs.size()));
  }
  std::sort(highs.begin(), highs.end(), liked_before);
  const std::size_t pool = std::min(highs.size(), static_cast<std::size_t>(2 * m));
  std::vector<const Comment*> out;
  for (std::size_t i : rng.sample_indices(pool, static_cast<std::size_t>(m))) out.push_back(highs[i]);
  return out;
}

std::vector<const Comment*> draw_ordinaries(const VideoRecord& r, int n, SeededRng& rng) {
  auto ords = r.comments_of(Tier::ordinary);
  if (static_cast<int>(ords.size()) < n) {
    throw TaskSkipped(r.video_id, "insufficient ordinary comments: need " + std::to_string(n) +
                                      ", have " + std::to_string(ords.size()));
  }
  std::sort(ords.begin(), ords.end(), [](const Comment* a, const Comment* b) {
    return a->comment_id < b->comment_id;
  });
  std::vector<const Comment*> out;
  for (std::size_t i : rng.sample_indices(ords.size(), static_cast<std::size_t>(n))) {
    out.push_back(ords[i]);
  }
  return out;
}

const Comment& require_god(const VideoRecord& r) {
  const Comment* god = r.top_god();
  if (!god) throw TaskSkipped(r.video_id, "no god comment");
  return *god;
}

std::string task_id_for(std::string_view kind, const TaskConfig& cfg, const VideoRecord& r,
                        std::uint64_t seed) {
  return std::string(kind) + "_" + std::to_string(cfg.high_count) + "_" +
         std::to_string(cfg.ordinary_count) + ":" + r.video_id + ":" + std::to_string(seed);
}

// Shuffles the chosen comments into labelled options.
std::vector<TaskOption> present(std::vector<const Comment*> chosen, SeededRng& rng) {
  rng.shuffle(chosen);
  std::vector<TaskOption> options;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    options.push_back({option_label(i), chosen[i]->comment_id, chosen[i]->text});
  }
  return options;
}

std::string label_of(const std::vector<TaskOption>& options, const std::string& comment_id) {
  for (const auto& o : options) {
    if (o.comment_id == comment_id) return o.label;
  }
  throw Error("comment not presented: " + comment_id);
}

TaskInstance skeleton(const VideoRecord& r, TaskKind kind, const TaskConfig& cfg,
                      std::uint64_t seed, const Comment& god) {
  TaskInstance t;
  t.task_id = task_id_for(to_string(kind), cfg, r, seed);
  t.video_id = r.video_id;
  t.kind = kind;
  t.config = cfg.label();
  t.context = context_of(r);
  t.key.dimensions = dimensions_of(god);
  return t;
}

}  // namespace

TaskInstance build_selection(const VideoRecord& r, const TaskConfig& cfg, std::uint64_t seed) {
  TaskConfig c = cfg;
  c.kind = TaskKind::selection;
  c.validate();
  const Comment& god = require_god(r);
  SeededRng rng(derive_seed(seed, "selection" + c.label() + ":" + r.video_id));
  std::vector<const Comment*> chosen{&god};
  for (auto* h : draw_highs(r, c.high_count, rng)) chosen.push_back(h);
  for (auto* o : draw_ordinaries(r, c.ordinary_count, rng)) chosen.push_back(o);

  TaskInstance t = skeleton(r, TaskKind::selection, c, seed, god);
  t.options = present(std::move(chosen), rng);
  t.key.correct_label = label_of(t.options, god.comment_id);
  return t;
}

TaskInstance build_ranking(const VideoRecord& r, std::uint64_t seed) {
  const TaskConfig c = TaskConfig::ranking(seed);
  const Comment& god = require_god(r);
  SeededRng rng(derive_seed(seed, "ranking" + c.label() + ":" + r.video_id));
  std::vector<const Comment*> chosen{&god};
  for (auto* h : draw_highs(r, c.high_count, rng)) {
    if (h->likes >= god.likes) throw TaskSkipped(r.video_id, "god not top-liked");
    chosen.push_back(h);
  }
  std::vector<const Comment*> reference = chosen;
  std::sort(reference.begin(), reference.end(), liked_before);

  TaskInstance t = skeleton(r, TaskKind::ranking, c, seed, god);
  t.options = present(std::move(chosen), rng);
  for (const Comment* cm : reference) t.key.reference_order.push_back(label_of(t.options, cm->comment_id));
  return t;
}

TaskInstance build_classification(const VideoRecord& r, std::uint64_t seed) {
  const TaskConfig c = TaskConfig::classification(seed);
  const Comment& god = require_god(r);
  SeededRng rng(derive_seed(seed, "classification" + c.label() + ":" + r.video_id));
  std::vector<const Comment*> chosen{&god};
  for (auto* h : draw_highs(r, c.high_count, rng)) chosen.push_back(h);
  for (auto* o : draw_ordinaries(r, c.ordinary_count, rng)) chosen.push_back(o);

  TaskInstance t = skeleton(r, TaskKind::classification, c, seed, god);
  t.options = present(chosen, rng);
  for (const auto& o : t.options) {
    auto it = std::find_if(chosen.begin(), chosen.end(),
                           [&](const Comment* cm) { return cm->comment_id == o.comment_id; });
    t.key.tiers[o.label] = (*it)->tier;
  }
  return t;
}

TaskInstance build_explanation(const VideoRecord& r) {
  const Comment& god = require_god(r);
  if (god.tags.empty()) throw TaskSkipped(r.video_id, "god comment has no Comment Art tags");
  if (trim(god.explanation).empty()) throw TaskSkipped(r.video_id, "god comment has no gold explanation");
  TaskInstance t;
  t.task_id = "explanation:" + r.video_id;
  t.video_id = r.video_id;
  t.kind = TaskKind::explanation;
  t.context = context_of(r);
  t.options.push_back({"A", god.comment_id, god.text});
  t.key.gold_tags = god.tags;
  std::sort(t.key.gold_tags.begin(), t.key.gold_tags.end());
  t.key.gold_tags.erase(std::unique(t.key.gold_tags.begin(), t.key.gold_tags.end()),
                        t.key.gold_tags.end());
  t.key.gold_explanation = god.explanation;
  t.key.dimensions = dimensions_of(god);
  return t;
}

TaskInstance build_creation(const VideoRecord& r) {
  const Comment& god = require_god(r);
  TaskInstance t;
  t.task_id = "creation:" + r.video_id;
  t.video_id = r.video_id;
  t.kind = TaskKind::creation;
  t.context = context_of(r);
  t.key.reference_text = god.text;
  t.key.dimensions = dimensions_of(god);
  return t;
}

TaskInstance build_task(const VideoRecord& record, const TaskConfig& cfg) {
  switch (cfg.kind) {
    case TaskKind::selection: return build_selection(record, cfg, cfg.seed);
    case TaskKind::ranking: return build_ranking(record, cfg.seed);
    case TaskKind::classification: return build_classification(record, cfg.seed);
    case TaskKind::explanation: return build_explanation(record);
    case TaskKind::creation: return build_creation(record);
    case TaskKind::preference: break;
  }
  throw ConfigError("preference tasks are built from generation runs, not records");
}

// --- few-shot -------------------------------------------------------------

FewShotSelection select_few_shot(const VideoRecord& target, const std::vector<VideoRecord>& train,
                                 std::uint64_t seed, const std::set<std::string>& exclude_texts) {
  std::vector<const VideoRecord*> usable;
  for (const auto& r : train) {
    if (r.video_id == target.video_id) continue;
    const Comment* god = r.top_god();
    if (!god || exclude_texts.count(god->text)) continue;
    usable.push_back(&r);
  }
  if (usable.empty()) throw ConfigError("few-shot pool is empty for " + target.video_id);

  std::set<std::string> target_tags;
  for (const Comment* g : target.comments_of(Tier::god)) {
    for (const auto& t : g->tags) target_tags.insert(t.subcategory);
  }

  std::vector<const VideoRecord*> same_category, shared_tag;
  for (const VideoRecord* r : usable) {
    if (r->category == target.category) same_category.push_back(r);
    bool shares = false;
    for (const Comment* g : r->comments_of(Tier::god)) {
      for (const auto& t : g->tags) shares = shares || target_tags.count(t.subcategory) > 0;
    }
    if (shares) shared_tag.push_back(r);
  }

  constexpr std::size_t kCandidates = 10;
  constexpr std::size_t kShots = 5;
  FewShotSelection sel;
  const std::vector<const VideoRecord*>* pool = &usable;
  sel.source = FewShotSource::all;
  if (same_category.size() >= kCandidates) {
    pool = &same_category;
    sel.source = FewShotSource::category;
  } else if (shared_tag.size() >= kCandidates) {
    pool = &shared_tag;
    sel.source = FewShotSource::tag;
  }

  SeededRng rng(derive_seed(seed, "fewshot:" + target.video_id));
  std::vector<FewShotExample> drawn;
  for (std::size_t i : rng.sample_indices(pool->size(), std::min(kCandidates, pool->size()))) {
    const VideoRecord* r = (*pool)[i];
    const Comment* god = r->top_god();
    sel.candidate_video_ids.push_back(r->video_id);
    drawn.push_back({r->video_id, god->comment_id, god->text, god->likes});
  }
  std::stable_sort(drawn.begin(), drawn.end(), [](const FewShotExample& a, const FewShotExample& b) {
    auto la = utf8_length(a.text), lb = utf8_length(b.text);
    if (la != lb) return la > lb;
    if (a.likes != b.likes) return a.likes > b.likes;
    return a.comment_id < b.comment_id;
  });
  if (drawn.size() > kShots) drawn.resize(kShots);
  sel.examples = std::move(drawn);
  return sel;
}

FewShotSource attach_few_shot(TaskInstance& task, const VideoRecord& target,
                              const std::vector<VideoRecord>& train, std::uint64_t seed) {
  std::set<std::string> exclude;
  for (const auto& o : task.options) exclude.insert(o.text);
  if (!task.key.reference_text.empty()) exclude.insert(task.key.reference_text);
  auto sel = select_few_shot(target, train, seed, exclude);
  task.fewshot = std::move(sel.examples);
  return sel.source;
}

}  // namespace cbench
