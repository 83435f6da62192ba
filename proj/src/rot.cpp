#include "cbench/rot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

namespace cbench::rot {

namespace {

std::string list_xml(std::string_view name, std::string_view item, const std::vector<std::string>& xs) {
  std::string out = "<" + std::string(name) + ">";
  for (const auto& x : xs) out += xml::element(item, x);
  out += "</" + std::string(name) + ">";
  return out;
}

// Items of a list node: element children if any, else the node's own text.
std::vector<std::string> list_items(const xml::Node* node) {
  std::vector<std::string> out;
  if (!node) return out;
  for (const auto& c : node->children) {
    if (!c.text.empty()) out.push_back(c.text);
  }
  if (node->children.empty() && !node->text.empty()) out.push_back(node->text);
  return out;
}

const xml::Node& require(const xml::Node& parent, std::string_view name) {
  const xml::Node* c = parent.child(name);
  if (!c) throw StructureError("missing <" + std::string(name) + "> in <" + parent.name + ">");
  return *c;
}

std::string entity_xml(const EntityX& e) {
  return "<entity>" + xml::element("type", e.type) + xml::element("identity", e.identity) +
         xml::element("attributes", e.attributes) + "</entity>";
}

std::string storyline_xml(const StorylineS& s) {
  return "<storyline>" + xml::element("action", s.action) + xml::element("subject", s.subject) +
         xml::element("object", s.object) + xml::element("sequence", std::to_string(s.sequence)) +
         "</storyline>";
}

std::string environment_xml(const EnvironmentE& e) {
  return "<environment>" + xml::element("location", e.location) + xml::element("time", e.time) +
         xml::element("context", e.context) + list_xml("entities", "entity", e.entity_refs) +
         "</environment>";
}

EntityX entity_from(const xml::Node& n) {
  return {n.child_text("type"), n.child_text("identity"), n.child_text("attributes")};
}

int parse_sequence(const std::string& text) {
  int v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw StructureError("storyline sequence '" + text + "' is not an integer");
  }
  return v;
}

StorylineS storyline_from(const xml::Node& n, bool need_sequence) {
  StorylineS s{n.child_text("action"), n.child_text("subject"), n.child_text("object"), 0};
  std::string seq = n.child_text("sequence");
  if (!seq.empty()) s.sequence = parse_sequence(seq);
  else if (need_sequence) throw StructureError("storyline without <sequence>");
  return s;
}

EnvironmentE environment_from(const xml::Node& n) {
  return {n.child_text("location"), n.child_text("time"), n.child_text("context"),
          list_items(n.child("entities"))};
}

// Children named `item` under the `group` container, or directly under
// `parent` when the model left the container out.
std::vector<const xml::Node*> grouped(const xml::Node& parent, std::string_view group,
                                      std::string_view item) {
  if (const xml::Node* g = parent.child(group)) return g->children_named(item);
  return parent.children_named(item);
}

bool mentions(std::string_view haystack, std::string_view identity) {
  return !identity.empty() && contains_icase(haystack, identity);
}

std::string associations_label(int n) {
  return n == 1 ? "storyline 1" : fmt::format("storylines 1..{}", n);
}

json entity_json(const EntityX& e) {
  return {{"type", e.type}, {"identity", e.identity}, {"attributes", e.attributes}};
}
json storyline_json(const StorylineS& s) {
  return {{"action", s.action}, {"subject", s.subject}, {"object", s.object}, {"sequence", s.sequence}};
}
json environment_json(const EnvironmentE& e) {
  return {{"location", e.location}, {"time", e.time}, {"context", e.context}, {"entities", e.entity_refs}};
}
json triple_json(const Triple& t) {
  return {{"entity", entity_json(t.entity)},
          {"storyline", storyline_json(t.storyline)},
          {"environment", environment_json(t.environment)}};
}

json analysis_json(const AnalysisQ& q) {
  return {{"basic", {{"ocr", q.basic.ocr}, {"subtitles", q.basic.subtitles}, {"caption", q.basic.caption}}},
          {"intermediate",
           {{"video_type", q.intermediate.video_type},
            {"characters", q.intermediate.characters},
            {"objects", q.intermediate.objects},
            {"event_sequence", q.intermediate.event_sequence}}},
          {"advanced",
           {{"emotional_tone", q.advanced.emotional_tone},
            {"cultural_context", q.advanced.cultural_context},
            {"social_values", q.advanced.social_values}}}};
}

json focal_json(const FocalSet& f) {
  json j = {{"entities", json::array()}, {"storylines", json::array()}, {"environments", json::array()}};
  for (const auto& e : f.entities) j["entities"].push_back(entity_json(e));
  for (const auto& s : f.storylines) j["storylines"].push_back(storyline_json(s));
  for (const auto& e : f.environments) j["environments"].push_back(environment_json(e));
  return j;
}

}  // namespace

// --- value types ------------------------------------------------------------

std::string AnalysisQ::to_xml() const {
  std::string out = "<analysis>\n  <basic>";
  out += xml::element("ocr", basic.ocr) + xml::element("subtitles", basic.subtitles) +
         xml::element("caption", basic.caption);
  out += "</basic>\n  <intermediate>";
  out += xml::element("video_type", intermediate.video_type);
  out += list_xml("characters", "item", intermediate.characters);
  out += list_xml("objects", "item", intermediate.objects);
  out += list_xml("event_sequence", "event", intermediate.event_sequence);
  out += "</intermediate>\n  <advanced>";
  out += xml::element("emotional_tone", advanced.emotional_tone) +
         xml::element("cultural_context", advanced.cultural_context) +
         xml::element("social_values", advanced.social_values);
  out += "</advanced>\n</analysis>";
  return out;
}

AnalysisQ AnalysisQ::from_xml(const xml::Node& node) {
  const auto& b = require(node, "basic");
  const auto& i = require(node, "intermediate");
  const auto& a = require(node, "advanced");
  AnalysisQ q;
  q.basic = {b.child_text("ocr"), b.child_text("subtitles"), b.child_text("caption")};
  q.intermediate.video_type = i.child_text("video_type");
  q.intermediate.characters = list_items(i.child("characters"));
  q.intermediate.objects = list_items(i.child("objects"));
  q.intermediate.event_sequence = list_items(i.child("event_sequence"));
  q.advanced = {a.child_text("emotional_tone"), a.child_text("cultural_context"),
                a.child_text("social_values")};
  return q;
}

std::string FocalSet::to_xml() const {
  std::string out = "<focal_set>\n  <entities>\n";
  for (const auto& e : entities) out += "    " + entity_xml(e) + "\n";
  out += "  </entities>\n  <storylines>\n";
  for (const auto& s : storylines) out += "    " + storyline_xml(s) + "\n";
  out += "  </storylines>\n  <environments>\n";
  for (const auto& e : environments) out += "    " + environment_xml(e) + "\n";
  out += "  </environments>\n</focal_set>";
  return out;
}

FocalSet FocalSet::from_xml(const xml::Node& node) {
  FocalSet f;
  for (const auto* n : grouped(node, "entities", "entity")) f.entities.push_back(entity_from(*n));
  for (const auto* n : grouped(node, "storylines", "storyline")) {
    f.storylines.push_back(storyline_from(*n, true));
  }
  for (const auto* n : grouped(node, "environments", "environment")) {
    f.environments.push_back(environment_from(*n));
  }
  return f;
}

FocalSet FocalSet::prefix(int m) const {
  const auto cut = [m](std::size_t size) { return std::min(size, static_cast<std::size_t>(std::max(m, 0))); };
  FocalSet out;
  out.storylines.assign(storylines.begin(), storylines.begin() + static_cast<std::ptrdiff_t>(cut(storylines.size())));
  out.environments.assign(environments.begin(),
                          environments.begin() + static_cast<std::ptrdiff_t>(cut(environments.size())));
  // Entities: the first m, plus any entity the kept storylines mention.
  for (std::size_t i = 0; i < entities.size(); ++i) {
    bool keep = i < cut(entities.size());
    for (const auto& s : out.storylines) {
      if (keep) break;
      keep = iequals_ascii(trim(s.subject), trim(entities[i].identity)) ||
             iequals_ascii(trim(s.object), trim(entities[i].identity));
    }
    if (keep) out.entities.push_back(entities[i]);
  }
  return out;
}

bool FocalSet::knows_entity(std::string_view identity) const {
  const std::string want = trim(identity);
  return std::any_of(entities.begin(), entities.end(),
                     [&](const EntityX& e) { return iequals_ascii(trim(e.identity), want); });
}

std::string Triple::to_xml() const {
  return "<extension>" + entity_xml(entity) + storyline_xml(storyline) + environment_xml(environment) +
         "</extension>";
}

std::string_view to_string(AssociationKind k) {
  switch (k) {
    case AssociationKind::sequential: return "sequential";
    case AssociationKind::jumping: return "jumping";
    case AssociationKind::branching: return "branching";
    case AssociationKind::embedded: return "embedded";
  }
  return "?";
}

std::size_t RoTTrace::gateway_calls() const {
  return static_cast<std::size_t>(
      std::count_if(events.begin(), events.end(), [](const TraceEvent& e) { return e.reached_model; }));
}

json RoTTrace::to_json() const {
  json j;
  j["video_id"] = video_id;
  j["k"] = k;
  j["m"] = m;
  j["gateway_calls"] = gateway_calls();
  j["events"] = json::array();
  for (const auto& e : events) {
    j["events"].push_back({{"phase", e.phase},
                           {"attempt", e.attempt},
                           {"prompt", e.prompt},
                           {"response", e.response},
                           {"error", e.error},
                           {"reached_model", e.reached_model}});
  }
  j["warnings"] = warnings;
  j["analysis"] = analysis_json(analysis);
  j["focal_set"] = focal_json(focal_set);
  j["extensions"] = json::array();
  for (const auto& x : extensions) {
    json hops = json::array();
    for (const auto& h : x.hops) hops.push_back(triple_json(h));
    j["extensions"].push_back({{"kind", to_string(x.kind)},
                               {"k", x.k},
                               {"m", x.m},
                               {"embedded_elements", x.embedded_elements},
                               {"triple", triple_json(x.triple)},
                               {"hops", hops},
                               {"provenance", x.provenance},
                               {"novel", x.novel},
                               {"fallback", x.fallback}});
  }
  j["candidates"] = json::array();
  for (const auto& c : candidates) j["candidates"].push_back({{"text", c.text}, {"source", to_string(c.source)}});
  j["scored"] = json::array();
  for (const auto& s : scored) {
    j["scored"].push_back({{"index", s.index}, {"scores", s.scores}, {"total", s.total}});
  }
  j["chosen_index"] = chosen_index;
  j["best_text"] = best_text;
  j["final_text"] = final_text;
  j["imprint_fallback"] = imprint_fallback;
  j["embedded_fallback"] = embedded_fallback;
  return j;
}

std::size_t argmax_total(const std::vector<ScoredComment>& scored) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scored.size(); ++i) {
    if (scored[i].total > scored[best].total) best = i;
  }
  return best;
}

int least_mentioned_storyline(const FocalSet& f) {
  int best = 1;
  std::size_t best_count = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < f.storylines.size(); ++i) {
    const auto& s = f.storylines[i];
    const std::string text = s.action + "\n" + s.subject + "\n" + s.object;
    std::size_t count = 0;
    for (const auto& e : f.entities) count += mentions(text, trim(e.identity)) ? 1 : 0;
    if (count < best_count) {
      best_count = count;
      best = static_cast<int>(i) + 1;
    }
  }
  return best;
}

// --- pipeline ---------------------------------------------------------------

Pipeline::Pipeline(Gateway& gateway, Params params, PromptPack prompts)
    : gateway_(gateway), params_(std::move(params)), prompts_(std::move(prompts)) {
  if (params_.retries < 0) throw ConfigError("rot retries must be >= 0");
  if (params_.dimensions.empty()) throw ConfigError("rot needs at least one interference dimension");
}

template <typename T, typename ParseFn>
T Pipeline::structured_call(const std::string& phase, const std::string& prompt, ParseFn parse,
                            RoTTrace& trace, double temperature, const ModelRequest* base) {
  std::string last_raw;
  std::string last_error;
  for (int attempt = 1; attempt <= 1 + params_.retries; ++attempt) {
    std::string text = prompt;
    if (attempt > 1) {
      text += "\n\n" + prompts_.render("repair", {{"error", last_error}, {"previous", last_raw}});
    }
    ModelRequest req;
    if (base) {
      req = *base;
      // The prompt is the last text part of an assembled request.
      for (auto it = req.parts.rbegin(); it != req.parts.rend(); ++it) {
        if (it->kind == ContentPart::Kind::text) {
          it->text = text;
          break;
        }
      }
    } else {
      req.model_id = params_.model_id;
      req.parts.push_back(ContentPart::of_text(text));
    }
    req.temperature = temperature;
    req.max_tokens = params_.max_tokens;
    req.metadata["phase"] = phase;

    TraceEvent ev{phase, attempt, req.prompt_text(), {}, {}, true};
    try {
      ev.response = gateway_.complete(req).text;
    } catch (const GatewayError& e) {
      ev.error = e.what();
      ev.reached_model = false;
      trace.events.push_back(ev);
      throw PhaseError(phase, PhaseError::Kind::transport, e.what());
    } catch (const ScriptError& e) {
      ev.error = e.what();
      ev.reached_model = false;
      trace.events.push_back(ev);
      throw PhaseError(phase, PhaseError::Kind::transport, e.what());
    }
    last_raw = ev.response;
    try {
      T value = parse(ev.response);
      trace.events.push_back(ev);
      return value;
    } catch (const StructureError& e) {
      last_error = e.what();
    } catch (const xml::ParseError& e) {
      last_error = e.what();
    }
    ev.error = last_error;
    trace.events.push_back(ev);
  }
  throw PhaseError(phase, PhaseError::Kind::structure,
                   fmt::format("unusable output after {} attempt(s): {}", 1 + params_.retries, last_error),
                   last_raw);
}

AnalysisQ Pipeline::ripple_initiation(const TaskContext& video, RoTTrace& trace) {
  const std::string prompt = prompts_.render("ripple_initiation", {{"video_context", describe_context(video)}});
  const FramePlan plan =
      frame_plan(video.duration_s, static_cast<int>(video.frame_paths.size()), params_.frame_policy);
  const ModelRequest base = assemble_request(params_.model_id, video.frame_paths, plan, "", prompt, "");
  trace.analysis = structured_call<AnalysisQ>(
      "ripple_initiation", prompt,
      [](const std::string& raw) { return AnalysisQ::from_xml(xml::parse_block(raw, "analysis")); }, trace,
      params_.temperature, &base);
  return trace.analysis;
}

FocalSet Pipeline::ripple_focalization(const AnalysisQ& q, RoTTrace& trace) {
  const std::string prompt = prompts_.render("ripple_focalization", {{"analysis", q.to_xml()}});
  FocalSet f = structured_call<FocalSet>(
      "ripple_focalization", prompt,
      [](const std::string& raw) {
        FocalSet f = FocalSet::from_xml(xml::parse_block(raw, "focal_set"));
        if (f.entities.empty() || f.storylines.empty() || f.environments.empty()) {
          throw StructureError(fmt::format(
              "focal set needs at least one entity, storyline and environment (got {}, {}, {})",
              f.entities.size(), f.storylines.size(), f.environments.size()));
        }
        return f;
      },
      trace, params_.temperature);

  std::stable_sort(f.storylines.begin(), f.storylines.end(),
                   [](const StorylineS& a, const StorylineS& b) { return a.sequence < b.sequence; });
  for (std::size_t i = 1; i < f.storylines.size(); ++i) {
    if (f.storylines[i].sequence == f.storylines[i - 1].sequence) {
      trace.warnings.push_back(
          fmt::format("ripple_focalization: duplicate storyline sequence {}", f.storylines[i].sequence));
    }
  }
  for (std::size_t i = 0; i < f.storylines.size(); ++i) f.storylines[i].sequence = static_cast<int>(i) + 1;
  for (const auto& s : f.storylines) {
    for (const std::string* ref : {&s.subject, &s.object}) {
      if (!trim(*ref).empty() && !f.knows_entity(*ref)) {
        trace.warnings.push_back(fmt::format("ripple_focalization: storyline {} refers to unknown entity '{}'",
                                             s.sequence, trim(*ref)));
      }
    }
  }
  trace.focal_set = f;
  return f;
}

Triple Pipeline::parse_triple(const std::string& raw, int sequence) const {
  const xml::Node node = xml::parse_block(raw, "extension");
  Triple t;
  t.entity = entity_from(require(node, "entity"));
  t.storyline = storyline_from(require(node, "storyline"), false);
  t.environment = environment_from(require(node, "environment"));
  if (t.entity.identity.empty()) throw StructureError("extension entity has no <identity>");
  if (t.storyline.action.empty()) throw StructureError("extension storyline has no <action>");
  t.storyline.sequence = sequence;
  return t;
}

Extension Pipeline::finish(Extension e, const FocalSet& f, RoTTrace& trace) const {
  e.novel = !f.knows_entity(e.triple.entity.identity);
  if (!e.novel) {
    trace.warnings.push_back(fmt::format("ripple_diffusion.{}: entity '{}' already in the focal set",
                                         to_string(e.kind), e.triple.entity.identity));
  }
  return e;
}

Extension Pipeline::diffuse_sequential(const FocalSet& f, RoTTrace& trace) {
  const int n = static_cast<int>(f.storylines.size());
  if (n < 1) throw PhaseError("ripple_diffusion.sequential", PhaseError::Kind::precondition, "no storylines");
  const std::string prompt = prompts_.render(
      "diffusion_sequential", {{"focal_set", f.to_xml()}, {"next_sequence", std::to_string(n + 1)}});
  Extension e;
  e.kind = AssociationKind::sequential;
  e.triple = structured_call<Triple>(
      "ripple_diffusion.sequential", prompt, [&](const std::string& raw) { return parse_triple(raw, n + 1); },
      trace, params_.temperature);
  e.provenance = associations_label(n);
  return finish(std::move(e), f, trace);
}

Extension Pipeline::diffuse_jumping(const FocalSet& f, int k, RoTTrace& trace, const Extension* first_hop) {
  const std::string phase = "ripple_diffusion.jumping";
  if (k < 2) throw PhaseError(phase, PhaseError::Kind::precondition, fmt::format("k must be >= 2, got {}", k));
  const int n = static_cast<int>(f.storylines.size());
  if (n < 1) throw PhaseError(phase, PhaseError::Kind::precondition, "no storylines");

  Extension e;
  e.kind = AssociationKind::jumping;
  e.k = k;
  e.provenance = associations_label(n);
  if (first_hop) {
    e.hops.push_back(first_hop->triple);
    e.provenance += "; hop 1 is the sequential association";
  }
  for (int hop = static_cast<int>(e.hops.size()) + 1; hop <= k; ++hop) {
    std::string chain;
    for (std::size_t i = 0; i < e.hops.size(); ++i) {
      chain += fmt::format("{}. {}\n", i + 1, e.hops[i].to_xml());
    }
    if (chain.empty()) chain = "(empty: start from the storylines above)\n";
    const std::string prompt =
        prompts_.render("diffusion_jumping", {{"hop", std::to_string(hop)},
                                              {"hops", std::to_string(k)},
                                              {"focal_set", f.to_xml()},
                                              {"chain", chain},
                                              {"next_sequence", std::to_string(n + hop)}});
    e.hops.push_back(structured_call<Triple>(
        phase, prompt, [&](const std::string& raw) { return parse_triple(raw, n + hop); }, trace,
        params_.temperature));
  }
  e.triple = e.hops.back();
  return finish(std::move(e), f, trace);
}

Extension Pipeline::diffuse_branching(const FocalSet& f, int m, RoTTrace& trace) {
  const int n = static_cast<int>(f.storylines.size());
  if (m < 1 || m > n) {
    throw PhaseError("ripple_diffusion.branching", PhaseError::Kind::precondition,
                     fmt::format("m must be in [1, {}], got {}", n, m));
  }
  const FocalSet detached = f.prefix(m);
  const std::string prompt = prompts_.render(
      "diffusion_branching",
      {{"m", std::to_string(m)}, {"focal_set", detached.to_xml()}, {"next_sequence", std::to_string(m + 1)}});
  Extension e;
  e.kind = AssociationKind::branching;
  e.m = m;
  e.triple = structured_call<Triple>(
      "ripple_diffusion.branching", prompt, [&](const std::string& raw) { return parse_triple(raw, m + 1); },
      trace, params_.temperature);
  e.provenance = associations_label(m);
  return finish(std::move(e), f, trace);
}

Extension Pipeline::diffuse_embedded(const FocalSet& f, const TaskContext& video, const AnalysisQ& q,
                                     RoTTrace& trace) {
  const int n = static_cast<int>(f.storylines.size());
  if (n < 1) throw PhaseError("ripple_diffusion.embedded", PhaseError::Kind::precondition, "no storylines");

  std::vector<std::string> elements;
  try {
    const std::string elicit = prompts_.render(
        "diffusion_embedded_elicit", {{"video_context", describe_context(video)}, {"analysis", q.to_xml()}});
    elements = structured_call<std::vector<std::string>>(
        "ripple_diffusion.embedded_elicit", elicit,
        [](const std::string& raw) {
          std::vector<std::string> items;
          const xml::Node node = xml::parse_block(raw, "cultural_elements");
          for (const auto* el : node.children_named("element")) {
            if (!el->text.empty()) items.push_back(el->text);
          }
          if (items.empty()) throw StructureError("no cultural elements listed");
          return items;
        },
        trace, params_.temperature);
  } catch (const PhaseError& e) {
    if (e.kind() != PhaseError::Kind::structure) throw;
    trace.warnings.push_back("ripple_diffusion.embedded: no cultural elements elicited; sequential fallback");
  }

  Extension e;
  e.kind = AssociationKind::embedded;
  e.embedded_elements = elements;
  std::string prompt;
  if (elements.empty()) {
    e.fallback = true;
    trace.embedded_fallback = true;
    prompt = prompts_.render("diffusion_sequential",
                             {{"focal_set", f.to_xml()}, {"next_sequence", std::to_string(n + 1)}});
    e.provenance = associations_label(n) + "; fallback without cultural elements";
  } else {
    std::string listed;
    for (const auto& el : elements) listed += "- " + el + "\n";
    prompt = prompts_.render("diffusion_embedded", {{"focal_set", f.to_xml()},
                                                    {"cultural_elements", listed},
                                                    {"next_sequence", std::to_string(n + 1)}});
    e.provenance = associations_label(n) + "; cultural elements: " + join(elements, "; ");
  }
  e.triple = structured_call<Triple>(
      "ripple_diffusion.embedded", prompt, [&](const std::string& raw) { return parse_triple(raw, n + 1); },
      trace, params_.temperature);
  return finish(std::move(e), f, trace);
}

std::vector<CandidateComment> Pipeline::generate_candidates(const std::vector<Extension>& extensions,
                                                            const TaskContext& video, RoTTrace& trace) {
  static constexpr AssociationKind kOrder[] = {AssociationKind::sequential, AssociationKind::jumping,
                                               AssociationKind::branching, AssociationKind::embedded};
  std::vector<const Extension*> ordered;
  for (AssociationKind kind : kOrder) {
    const Extension* found = nullptr;
    for (const auto& e : extensions) {
      if (e.kind != kind) continue;
      if (found) {
        throw PhaseError("candidate_generation", PhaseError::Kind::precondition,
                         "duplicate " + std::string(to_string(kind)) + " extension");
      }
      found = &e;
    }
    if (!found) {
      throw PhaseError("candidate_generation", PhaseError::Kind::precondition,
                       "missing " + std::string(to_string(kind)) + " extension");
    }
    ordered.push_back(found);
  }
  if (extensions.size() != 4) {
    throw PhaseError("candidate_generation", PhaseError::Kind::precondition, "expected exactly 4 extensions");
  }

  const std::string context = describe_context(video);
  std::vector<CandidateComment> out;
  for (const Extension* e : ordered) {
    std::string ext = e->triple.to_xml();
    if (!e->embedded_elements.empty()) {
      ext += "\n" + list_xml("cultural_elements", "element", e->embedded_elements);
    }
    const std::string prompt = prompts_.render(
        "generation",
        {{"video_context", context}, {"association_kind", std::string(to_string(e->kind))}, {"extension", ext}});
    std::string text = structured_call<std::string>(
        "candidate_generation." + std::string(to_string(e->kind)), prompt,
        [](const std::string& raw) {
          std::string t;
          try {
            t = xml::parse_block(raw, "comment").text;
          } catch (const xml::ParseError&) {
            t = trim(raw);  // a bare comment without the wrapper is fine
          }
          if (t.empty()) throw StructureError("empty comment");
          return t;
        },
        trace, params_.temperature);
    out.push_back({std::move(text), e->kind});
  }
  trace.candidates = out;
  return out;
}

ScoredComment Pipeline::wave_interference(const std::vector<CandidateComment>& candidates,
                                          const TaskContext& video, RoTTrace& trace) {
  const std::string phase = "wave_interference";
  if (candidates.size() < 2) {
    throw PhaseError(phase, PhaseError::Kind::precondition, "at least two candidates are required");
  }
  std::string listed;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    listed += fmt::format("<candidate index=\"{}\">{}</candidate>\n", i + 1, xml::escape(candidates[i].text));
  }
  std::string tags;
  for (const auto& d : params_.dimensions) tags += "<" + d + ">0-10</" + d + ">";
  const std::string prompt = prompts_.render("wave_interference", {{"video_context", describe_context(video)},
                                                                   {"candidates", listed},
                                                                   {"dimensions", join(params_.dimensions, ", ")},
                                                                   {"dimension_tags", tags}});
  const auto& dims = params_.dimensions;
  std::vector<ScoredComment> scored = structured_call<std::vector<ScoredComment>>(
      phase, prompt,
      [&](const std::string& raw) {
        const xml::Node node = xml::parse_block(raw, "scores");
        const auto rows = node.children_named("candidate");
        if (rows.size() != candidates.size()) {
          throw StructureError(fmt::format("expected {} scored candidates, got {}", candidates.size(), rows.size()));
        }
        std::vector<ScoredComment> out(candidates.size());
        std::vector<bool> seen(candidates.size(), false);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          std::size_t idx = r;
          if (std::string a = rows[r]->attribute("index"); !a.empty()) {
            int v = 0;
            auto [p, ec] = std::from_chars(a.data(), a.data() + a.size(), v);
            if (ec != std::errc() || p != a.data() + a.size() || v < 1 ||
                static_cast<std::size_t>(v) > candidates.size()) {
              throw StructureError("bad candidate index '" + a + "'");
            }
            idx = static_cast<std::size_t>(v - 1);
          }
          if (seen[idx]) throw StructureError(fmt::format("candidate {} scored twice", idx + 1));
          seen[idx] = true;
          if (rows[r]->children.size() != dims.size()) {
            throw StructureError(fmt::format("candidate {}: expected {} dimension scores, got {}", idx + 1,
                                             dims.size(), rows[r]->children.size()));
          }
          ScoredComment& s = out[idx];
          s.candidate = candidates[idx];
          s.index = idx;
          for (const auto& d : dims) {
            const xml::Node* c = rows[r]->child(d);
            if (!c) throw StructureError(fmt::format("candidate {}: missing <{}>", idx + 1, d));
            double v = 0;
            auto [p, ec] = std::from_chars(c->text.data(), c->text.data() + c->text.size(), v);
            if (ec != std::errc() || p != c->text.data() + c->text.size() || !std::isfinite(v) || v < 0 ||
                v > 10) {
              throw StructureError(fmt::format("candidate {}: {} score '{}' is not in [0, 10]", idx + 1, d, c->text));
            }
            s.scores.push_back(v);
          }
        }
        for (auto& s : out) {
          s.total = 0;
          for (double v : s.scores) s.total += v;
        }
        return out;
      },
      trace, 0.0);
  trace.scored = scored;
  trace.chosen_index = argmax_total(scored);
  trace.best_text = scored[trace.chosen_index].candidate.text;
  return scored[trace.chosen_index];
}

std::string Pipeline::luminous_imprint(const ScoredComment& best, RoTTrace& trace) {
  const std::string phase = "luminous_imprint";
  if (trim(best.candidate.text).empty()) {
    throw PhaseError(phase, PhaseError::Kind::precondition, "nothing to rewrite");
  }
  const std::string prompt = prompts_.render(
      "luminous_imprint", {{"max_chars", std::to_string(params_.max_chars)}, {"comment", best.candidate.text}});
  const std::size_t cap = static_cast<std::size_t>(params_.max_chars);
  try {
    trace.final_text = structured_call<std::string>(
        phase, prompt,
        [cap](const std::string& raw) {
          std::string t;
          try {
            t = xml::parse_block(raw, "final").text;
          } catch (const xml::ParseError&) {
            if (raw.find('<') != std::string::npos) throw;
            t = trim(raw);
          }
          if (t.empty()) throw StructureError("empty rewrite");
          if (utf8_length(t) > cap) {
            throw StructureError(fmt::format("rewrite has {} characters, limit is {}", utf8_length(t), cap));
          }
          return t;
        },
        trace, params_.temperature);
    trace.imprint_fallback = false;
  } catch (const PhaseError& e) {
    trace.final_text = best.candidate.text;
    trace.imprint_fallback = true;
    trace.warnings.push_back(std::string("luminous_imprint: kept the interference winner (") + e.what() + ")");
  }
  return trace.final_text;
}

RoTTrace Pipeline::run(const std::string& video_id, const TaskContext& video) {
  RoTTrace trace;
  trace.video_id = video_id;
  trace.k = params_.k;

  const AnalysisQ q = ripple_initiation(video, trace);
  const FocalSet f = ripple_focalization(q, trace);
  trace.m = params_.m.value_or(least_mentioned_storyline(f));

  Extension seq = diffuse_sequential(f, trace);
  Extension jump = diffuse_jumping(f, params_.k, trace, &seq);
  Extension branch = diffuse_branching(f, trace.m, trace);
  Extension embed = diffuse_embedded(f, video, q, trace);
  trace.extensions = {seq, jump, branch, embed};

  const auto candidates = generate_candidates(trace.extensions, video, trace);
  const ScoredComment best = wave_interference(candidates, video, trace);
  luminous_imprint(best, trace);
  return trace;
}

RoTTrace Pipeline::run(const VideoRecord& record) { return run(record.video_id, context_of(record)); }

}  // namespace cbench::rot
