#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cbench/gateway.hpp"
#include "cbench/prompts.hpp"
#include "cbench/tasks.hpp"
#include "cbench/xml.hpp"

// Ripple-of-Thought: a five-phase creative comment pipeline.
//
//   initiation    three-layer video analysis            -> AnalysisQ
//   focalization  entity / storyline / environment sets -> FocalSet
//   diffusion     four association operators            -> 4 Extensions
//                 (+ one generation call per extension  -> 4 candidates)
//   interference  listwise scoring, local argmax        -> ScoredComment
//   imprint       concise, harmless rewrite             -> final text
//
// Every model exchange is recorded in the RoTTrace in call order.

namespace cbench::rot {

/// A model answer that does not fit the phase's XML schema.
class StructureError : public Error {
 public:
  using Error::Error;
};

class PhaseError : public Error {
 public:
  enum class Kind { structure, transport, precondition };
  PhaseError(std::string phase, Kind kind, const std::string& message, std::string raw = {})
      : Error(phase + ": " + message), phase_(std::move(phase)), kind_(kind), raw_(std::move(raw)) {}
  const std::string& phase() const { return phase_; }
  Kind kind() const { return kind_; }
  /// Last raw model output, for structure failures.
  const std::string& raw_text() const { return raw_; }

 private:
  std::string phase_;
  Kind kind_;
  std::string raw_;
};

struct AnalysisQ {
  struct Basic {
    std::string ocr, subtitles, caption;
    bool operator==(const Basic&) const = default;
  } basic;
  struct Intermediate {
    std::string video_type;
    std::vector<std::string> characters, objects, event_sequence;
    bool operator==(const Intermediate&) const = default;
  } intermediate;
  struct Advanced {
    std::string emotional_tone, cultural_context, social_values;
    bool operator==(const Advanced&) const = default;
  } advanced;

  bool operator==(const AnalysisQ&) const = default;
  std::string to_xml() const;
  /// Requires all three layers; missing fields inside a layer read as "".
  static AnalysisQ from_xml(const xml::Node& node);
};

struct EntityX {
  std::string type, identity, attributes;
  bool operator==(const EntityX&) const = default;
};

struct StorylineS {
  std::string action, subject, object;
  int sequence = 0;
  bool operator==(const StorylineS&) const = default;
};

struct EnvironmentE {
  std::string location, time, context;
  std::vector<std::string> entity_refs;
  bool operator==(const EnvironmentE&) const = default;
};

struct FocalSet {
  std::vector<EntityX> entities;
  std::vector<StorylineS> storylines;
  std::vector<EnvironmentE> environments;

  bool operator==(const FocalSet&) const = default;
  std::string to_xml() const;
  /// Parses without validation; see ripple_focalization for the checks.
  static FocalSet from_xml(const xml::Node& node);
  /// Union of the first m (entity, storyline, environment) tuples.
  FocalSet prefix(int m) const;
  bool knows_entity(std::string_view identity) const;
};

struct Triple {
  EntityX entity;
  StorylineS storyline;
  EnvironmentE environment;
  bool operator==(const Triple&) const = default;
  std::string to_xml() const;
};

enum class AssociationKind { sequential, jumping, branching, embedded };
std::string_view to_string(AssociationKind k);

struct Extension {
  AssociationKind kind = AssociationKind::sequential;
  int k = 0;  // jumping hops
  int m = 0;  // branching prefix length
  std::vector<std::string> embedded_elements;
  Triple triple;
  /// Which focal subset fed the association, e.g. "storylines 1..2".
  std::string provenance;
  /// Every hop of a jumping association, first to last.
  std::vector<Triple> hops;
  bool novel = true;
  bool fallback = false;

  bool operator==(const Extension&) const = default;
};

struct CandidateComment {
  std::string text;
  AssociationKind source = AssociationKind::sequential;
  bool operator==(const CandidateComment&) const = default;
};

struct ScoredComment {
  CandidateComment candidate;
  std::size_t index = 0;  // position among the candidates, 0-based
  std::vector<double> scores;
  double total = 0.0;
  bool operator==(const ScoredComment&) const = default;
};

struct TraceEvent {
  std::string phase;
  int attempt = 1;
  std::string prompt;
  std::string response;
  std::string error;  // structure or transport problem with this exchange
  bool reached_model = true;

  bool operator==(const TraceEvent&) const = default;
};

struct Params {
  int k = 2;
  /// Branching prefix; unset picks the storyline with the fewest entity
  /// mentions.
  std::optional<int> m;
  int retries = 1;
  int max_chars = 60;
  std::vector<std::string> dimensions = {"relevance", "creativity", "engagement",
                                         "resonance", "fluency", "safety"};
  std::string model_id;
  double temperature = 0.8;
  int max_tokens = 1024;
  FramePolicy frame_policy = FramePolicy::dynamic;
};

struct RoTTrace {
  std::string video_id;
  int k = 0;
  int m = 0;
  std::vector<TraceEvent> events;
  std::vector<std::string> warnings;
  AnalysisQ analysis;
  FocalSet focal_set;
  std::vector<Extension> extensions;
  std::vector<CandidateComment> candidates;
  std::vector<ScoredComment> scored;
  std::size_t chosen_index = 0;
  std::string best_text;
  std::string final_text;
  bool imprint_fallback = false;
  bool embedded_fallback = false;

  bool operator==(const RoTTrace&) const = default;
  /// Exchanges that reached the model.
  std::size_t gateway_calls() const;
  json to_json() const;
};

/// Index of the highest total; ties go to the lowest index.
std::size_t argmax_total(const std::vector<ScoredComment>& scored);

/// Storyline (1-based) whose subject/object/action mention the fewest known
/// entities; ties go to the earliest storyline.
int least_mentioned_storyline(const FocalSet& f);

class Pipeline {
 public:
  Pipeline(Gateway& gateway, Params params = {}, PromptPack prompts = PromptPack::builtin());

  AnalysisQ ripple_initiation(const TaskContext& video, RoTTrace& trace);
  FocalSet ripple_focalization(const AnalysisQ& q, RoTTrace& trace);

  Extension diffuse_sequential(const FocalSet& f, RoTTrace& trace);
  /// k chained associations. When `first_hop` is given it stands in for
  /// hop 1 (it is the sequential association itself) and only k-1 calls are
  /// made.
  Extension diffuse_jumping(const FocalSet& f, int k, RoTTrace& trace,
                            const Extension* first_hop = nullptr);
  Extension diffuse_branching(const FocalSet& f, int m, RoTTrace& trace);
  Extension diffuse_embedded(const FocalSet& f, const TaskContext& video, const AnalysisQ& q,
                             RoTTrace& trace);

  std::vector<CandidateComment> generate_candidates(const std::vector<Extension>& extensions,
                                                    const TaskContext& video, RoTTrace& trace);
  ScoredComment wave_interference(const std::vector<CandidateComment>& candidates,
                                  const TaskContext& video, RoTTrace& trace);
  std::string luminous_imprint(const ScoredComment& best, RoTTrace& trace);

  RoTTrace run(const std::string& video_id, const TaskContext& video);
  RoTTrace run(const VideoRecord& record);

  const Params& params() const { return params_; }

 private:
  template <typename T, typename ParseFn>
  T structured_call(const std::string& phase, const std::string& prompt, ParseFn parse,
                    RoTTrace& trace, double temperature, const ModelRequest* base = nullptr);

  Triple parse_triple(const std::string& raw, int sequence) const;
  Extension finish(Extension e, const FocalSet& f, RoTTrace& trace) const;

  Gateway& gateway_;
  Params params_;
  PromptPack prompts_;
};

}  // namespace cbench::rot
