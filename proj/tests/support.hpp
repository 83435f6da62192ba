#pragma once

// Shared fixtures: a synthetic corpus generator, a scripted RoT conversation
// and a scratch directory.

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cbench/dataset.hpp"
#include "cbench/gateway.hpp"
#include "cbench/util.hpp"

namespace cbench::test {

inline const char* kCategories[] = {"Comedy", "Games", "Pets", "Food", "Sports"};

/// A record with one god comment (most liked), `highs` high and `ords`
/// ordinary comments. Likes fall strictly with rank so every builder accepts
/// it.
inline VideoRecord synthetic_record(std::size_t i, int highs = 6, int ords = 8) {
  VideoRecord r;
  r.video_id = fmt::format("v{:05}", i);
  r.title = fmt::format("Video {}", i);
  r.duration_s = 30.0 + static_cast<double>(i % 200);
  r.category = kCategories[i % 5];
  r.subcategory = "General";
  r.ocr_text = "caption text";
  r.subtitle_text = "spoken line";
  Comment god;
  god.comment_id = r.video_id + "-g";
  god.text = fmt::format("god comment {} with a clever twist and pun", i);
  god.likes = 100000 + static_cast<std::int64_t>(i);
  god.tier = Tier::god;
  const char* tags[] = {"Humor", "Metaphor", "Meme", "Poetry", "Authenticity", "Surrealism"};
  god.tags.push_back(Taxonomy::builtin().parse_tag(tags[i % 6]));
  if (i % 3 == 0) god.tags.push_back(Taxonomy::builtin().parse_tag(tags[(i + 2) % 6]));
  god.explanation = "The comment turns the scene into a pun.";
  r.comments.push_back(god);
  for (int h = 0; h < highs; ++h) {
    Comment c;
    c.comment_id = fmt::format("{}-h{}", r.video_id, h);
    c.text = fmt::format("high comment {} number {}", i, h);
    c.likes = 5000 - h * 100;
    c.tier = Tier::high;
    r.comments.push_back(c);
  }
  for (int o = 0; o < ords; ++o) {
    Comment c;
    c.comment_id = fmt::format("{}-o{}", r.video_id, o);
    c.text = fmt::format("ordinary comment {} number {}", i, o);
    c.likes = 10 + o;
    c.tier = Tier::ordinary;
    r.comments.push_back(c);
  }
  return r;
}

inline std::vector<VideoRecord> synthetic_corpus(std::size_t n, int highs = 6, int ords = 8) {
  std::vector<VideoRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic_record(i, highs, ords));
  return out;
}

inline std::string extension_xml(const std::string& identity, const std::string& action) {
  return fmt::format(
      "<extension><entity><type>object</type><identity>{0}</identity><attributes>new</attributes></entity>"
      "<storyline><action>{1}</action><subject>cat</subject><object>{0}</object><sequence>9</sequence></storyline>"
      "<environment><location>kitchen</location><time>night</time><context>quiet</context>"
      "<entities><entity>cat</entity></entities></environment></extension>",
      identity, action);
}

inline std::string scores_xml(const std::vector<std::vector<int>>& rows) {
  static const char* dims[] = {"relevance", "creativity", "engagement", "resonance", "fluency", "safety"};
  std::string out = "<scores>";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += fmt::format("<candidate index=\"{}\">", i + 1);
    for (std::size_t d = 0; d < rows[i].size(); ++d) out += fmt::format("<{0}>{1}</{0}>", dims[d], rows[i][d]);
    out += "</candidate>";
  }
  return out + "</scores>";
}

inline const std::string kAnalysisXml =
    "<analysis><basic><ocr>NO</ocr><subtitles>meow</subtitles><caption>A cat meets a cucumber.</caption></basic>"
    "<intermediate><video_type>pets</video_type><characters><item>cat</item></characters>"
    "<objects><item>cucumber</item></objects><event_sequence><event>cat sees cucumber</event>"
    "<event>cat jumps</event></event_sequence></intermediate>"
    "<advanced><emotional_tone>funny</emotional_tone><cultural_context>internet cats</cultural_context>"
    "<social_values>pet care</social_values></advanced></analysis>";

inline const std::string kFocalXml =
    "<focal_set><entities>"
    "<entity><type>animal</type><identity>cat</identity><attributes>orange</attributes></entity>"
    "<entity><type>object</type><identity>cucumber</identity><attributes>green</attributes></entity>"
    "</entities><storylines>"
    "<storyline><action>sees</action><subject>cat</subject><object>cucumber</object><sequence>1</sequence></storyline>"
    "<storyline><action>leaps into the air</action><subject></subject><object></object><sequence>2</sequence></storyline>"
    "</storylines><environments>"
    "<environment><location>kitchen</location><time>morning</time><context>home</context>"
    "<entities><entity>cat</entity><entity>cucumber</entity></entities></environment>"
    "</environments></focal_set>";

/// A full RoT conversation in the order the pipeline asks. Candidate 3
/// (branching) wins interference.
inline json rot_script_json(const std::string& final_text = "<final>Cucumber: 1, cat: 0.</final>") {
  json s = json::array();
  auto add = [&](const std::string& phase, const std::string& text) {
    s.push_back({{"match", {{"phase", phase}}}, {"text", text}});
  };
  add("ripple_initiation", kAnalysisXml);
  add("ripple_focalization", kFocalXml);
  add("ripple_diffusion.sequential", extension_xml("dog", "barks at the cucumber"));
  add("ripple_diffusion.jumping", extension_xml("rocket", "launches from the kitchen"));
  add("ripple_diffusion.branching", extension_xml("ninja", "practises stealth"));
  add("ripple_diffusion.embedded_elicit", "<cultural_elements><element>cat vs cucumber meme</element></cultural_elements>");
  add("ripple_diffusion.embedded", extension_xml("meme", "goes viral"));
  add("candidate_generation.sequential", "<comment>The dog saw it coming.</comment>");
  add("candidate_generation.jumping", "<comment>Houston, we have a cucumber.</comment>");
  add("candidate_generation.branching", "<comment>Ninja training: level cucumber.</comment>");
  add("candidate_generation.embedded", "<comment>Another episode of cat vs cucumber.</comment>");
  add("wave_interference", scores_xml({{5, 5, 5, 5, 5, 5}, {6, 6, 6, 6, 6, 6}, {9, 9, 8, 9, 9, 9}, {7, 7, 7, 7, 7, 7}}));
  add("luminous_imprint", final_text);
  return s;
}

inline std::vector<ScriptEntry> rot_script(const std::string& final_text = "<final>Cucumber: 1, cat: 0.</final>") {
  return ScriptedTransport::parse_script(rot_script_json(final_text));
}

/// Removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           fmt::format("cbench-test-{}-{}", static_cast<long>(::getpid()), counter++);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline RetryPolicy no_sleep_retry(int attempts = 5) {
  RetryPolicy p;
  p.max_attempts = attempts;
  p.sleep = [](double) {};
  return p;
}

}  // namespace cbench::test
