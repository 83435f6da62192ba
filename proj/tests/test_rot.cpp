#include <doctest.h>

#include "cbench/rot.hpp"
#include "support.hpp"

using namespace cbench;
using namespace cbench::rot;

namespace {

struct Harness {
  std::shared_ptr<ScriptedTransport> transport;
  Gateway gateway;
  Pipeline pipeline;

  explicit Harness(const json& script, Params params = {})
      : transport(std::make_shared<ScriptedTransport>(ScriptedTransport::parse_script(script))),
        gateway(transport, test::no_sleep_retry()),
        pipeline(gateway, std::move(params)) {}

  RoTTrace run() { return pipeline.run(test::synthetic_record(7)); }
};

json& entry(json& script, const std::string& phase) {
  for (auto& e : script) {
    if (e["match"]["phase"] == phase) return e;
  }
  FAIL("no script entry for " << phase);
  return script[0];
}

}  // namespace

TEST_CASE("full pipeline makes 13 calls and keeps the interference winner") {
  Harness h(test::rot_script_json());
  const RoTTrace t = h.run();
  CHECK(t.gateway_calls() == 13);
  CHECK(h.transport->requests().size() == 13);
  CHECK(h.transport->remaining() == 0);
  CHECK(t.m == 2);
  REQUIRE(t.candidates.size() == 4);
  REQUIRE(t.scored.size() == 4);
  CHECK(t.chosen_index == 2);
  CHECK(t.chosen_index == argmax_total(t.scored));
  CHECK(t.scored[2].total == doctest::Approx(53.0));
  CHECK(t.best_text == "Ninja training: level cucumber.");
  CHECK(t.final_text == "Cucumber: 1, cat: 0.");
  CHECK_FALSE(t.imprint_fallback);
  CHECK_FALSE(t.embedded_fallback);
}

TEST_CASE("jumping reuses the sequential association as hop 1") {
  Harness h(test::rot_script_json());
  const RoTTrace t = h.run();
  const Extension& seq = t.extensions[0];
  const Extension& jump = t.extensions[1];
  REQUIRE(jump.hops.size() == 2);
  CHECK(jump.hops[0] == seq.triple);
  CHECK(jump.triple.entity.identity == "rocket");
}

TEST_CASE("larger k asks for more hops") {
  json script = test::rot_script_json();
  entry(script, "ripple_diffusion.jumping")["times"] = 2;
  Params p;
  p.k = 3;
  Harness h(script, p);
  const RoTTrace t = h.run();
  CHECK(t.gateway_calls() == 14);
  CHECK(t.extensions[1].hops.size() == 3);
}

TEST_CASE("interference runs greedy, the rest sample") {
  Harness h(test::rot_script_json());
  h.run();
  for (const auto& r : h.transport->requests()) {
    if (r.phase() == "wave_interference") {
      CHECK(r.temperature == 0.0);
    } else {
      CHECK(r.temperature == doctest::Approx(0.8));
    }
  }
}

TEST_CASE("branching sees only the first m storylines") {
  Params p;
  p.m = 1;
  Harness h(test::rot_script_json(), p);
  const RoTTrace t = h.run();
  CHECK(t.m == 1);
  for (const auto& r : h.transport->requests()) {
    if (r.phase() == "ripple_diffusion.branching") {
      CHECK(r.prompt_text().find("leaps into the air") == std::string::npos);
    }
  }
  p.m = 3;
  Harness bad(test::rot_script_json(), p);
  try {
    bad.run();
    FAIL("expected a precondition failure");
  } catch (const PhaseError& e) {
    CHECK(e.kind() == PhaseError::Kind::precondition);
    CHECK(e.phase() == "ripple_diffusion.branching");
  }
}

TEST_CASE("identical scripts give identical traces") {
  Harness a(test::rot_script_json()), b(test::rot_script_json());
  const RoTTrace x = a.run(), y = b.run();
  CHECK(x == y);
  CHECK(x.to_json().dump() == y.to_json().dump());
}

TEST_CASE("a malformed answer is repaired once") {
  json script = test::rot_script_json();
  script.insert(script.begin() + 1, json{{"match", {{"phase", "ripple_focalization"}}}, {"text", "<focal_set>oops"}});
  Harness h(script);
  const RoTTrace t = h.run();
  CHECK(t.gateway_calls() == 14);
  const auto reqs = h.transport->requests();
  CHECK(reqs[1].phase() == "ripple_focalization");
  CHECK(reqs[2].phase() == "ripple_focalization");
  CHECK(reqs[2].prompt_text().find("<focal_set>oops") != std::string::npos);
  CHECK(t.events[1].error.size() > 0);
  CHECK(t.events[2].attempt == 2);
}

TEST_CASE("a phase that stays malformed fails with its name") {
  json script = test::rot_script_json();
  entry(script, "ripple_focalization")["text"] = "no xml at all";
  entry(script, "ripple_focalization")["times"] = 2;
  Harness h(script);
  try {
    h.run();
    FAIL("expected a phase error");
  } catch (const PhaseError& e) {
    CHECK(e.phase() == "ripple_focalization");
    CHECK(e.kind() == PhaseError::Kind::structure);
    CHECK(e.raw_text() == "no xml at all");
  }
  CHECK(h.transport->requests().size() == 3);
}

TEST_CASE("interference rejects out-of-range scores") {
  json script = test::rot_script_json();
  entry(script, "wave_interference")["text"] =
      test::scores_xml({{5, 5, 5, 5, 5, 5}, {6, 6, 6, 6, 6, 6}, {11, 9, 8, 9, 9, 9}, {7, 7, 7, 7, 7, 7}});
  entry(script, "wave_interference")["times"] = 2;
  Harness h(script);
  CHECK_THROWS_AS(h.run(), PhaseError);
}

TEST_CASE("an overlong rewrite falls back to the interference winner") {
  const std::string long_text = "<final>" + std::string(80, 'x') + "</final>";
  json script = test::rot_script_json(long_text);
  entry(script, "luminous_imprint")["times"] = 2;
  Harness h(script);
  const RoTTrace t = h.run();
  CHECK(t.imprint_fallback);
  CHECK(t.final_text == t.best_text);
  CHECK_FALSE(t.warnings.empty());
}

TEST_CASE("imprint counts characters, not bytes") {
  // 30 CJK characters are 90 bytes but fit a 60 character budget.
  std::string cjk;
  for (int i = 0; i < 30; ++i) cjk += "猫";
  Harness h(test::rot_script_json("<final>" + cjk + "</final>"));
  const RoTTrace t = h.run();
  CHECK_FALSE(t.imprint_fallback);
  CHECK(t.final_text == cjk);
}

TEST_CASE("embedded association falls back when no cultural elements come back") {
  json script = test::rot_script_json();
  entry(script, "ripple_diffusion.embedded_elicit")["text"] = "<cultural_elements></cultural_elements>";
  entry(script, "ripple_diffusion.embedded_elicit")["times"] = 2;
  Harness h(script);
  const RoTTrace t = h.run();
  CHECK(t.embedded_fallback);
  CHECK(t.extensions[3].fallback);
  CHECK(t.extensions[3].embedded_elements.empty());
  CHECK(t.candidates.size() == 4);
}

TEST_CASE("transport failures surface as transport phase errors") {
  json script = test::rot_script_json();
  entry(script, "ripple_diffusion.sequential") = json{{"match", {{"phase", "ripple_diffusion.sequential"}}},
                                                      {"fail", "fatal"}};
  Harness h(script);
  try {
    h.run();
    FAIL("expected a transport failure");
  } catch (const PhaseError& e) {
    CHECK(e.kind() == PhaseError::Kind::transport);
    CHECK(e.phase() == "ripple_diffusion.sequential");
  }
}

TEST_CASE("argmax ties go to the first candidate") {
  std::vector<ScoredComment> s(3);
  s[0].total = 4;
  s[1].total = 9;
  s[2].total = 9;
  CHECK(argmax_total(s) == 1);
}

TEST_CASE("least mentioned storyline") {
  FocalSet f;
  f.entities = {{"animal", "cat", ""}, {"object", "box", ""}};
  f.storylines = {{"sits", "cat", "box", 1}, {"sleeps", "cat", "", 2}, {"jumps", "cat", "", 3}};
  CHECK(least_mentioned_storyline(f) == 2);
}
