#include <doctest.h>

#include "cbench/judge.hpp"
#include "support.hpp"

using namespace cbench;
using namespace cbench::judge;

namespace {

std::string explanation_scores(int a, int b, int c, int d, int e) {
  return fmt::format(
      "<scores><precision>{}</precision><reasonableness>{}</reasonableness><completeness>{}</completeness>"
      "<relevance>{}</relevance><clarity>{}</clarity></scores>",
      a, b, c, d, e);
}

std::string creation_scores(const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
  return fmt::format("<scores><creativity>{}</creativity><quality>{}</quality><style>{}</style><impact>{}</impact></scores>",
                     a, b, c, d);
}

std::shared_ptr<ScriptedTransport> replies(std::vector<std::string> texts) {
  std::vector<ScriptEntry> s;
  for (auto& t : texts) s.push_back(ScriptEntry::reply(ScriptMatcher::any(), std::move(t)));
  return std::make_shared<ScriptedTransport>(std::move(s));
}

}  // namespace

TEST_CASE("explanation composite of all fives is 65") {
  const CriterionScores s = compose(TaskKind::explanation, {5, 5, 5, 5, 5});
  CHECK(s.composite_raw == doctest::Approx(65.0));
  CHECK(s.composite_norm == doctest::Approx(1.0));
  // 5*1 + 3*2 + 2*3 + 2*4 + 1*5 = 30
  CHECK(compose(TaskKind::explanation, {1, 2, 3, 4, 5}).composite_raw == doctest::Approx(30.0));
}

TEST_CASE("creation composite is the mean over 20") {
  const CriterionScores s = compose(TaskKind::creation, {2, 3, 4, 5});
  CHECK(s.composite_raw == doctest::Approx(14.0));
  CHECK(s.composite_norm == doctest::Approx(0.7));
}

TEST_CASE("out-of-range scores are clamped and recorded") {
  const CriterionScores s = compose(TaskKind::creation, {7, -1, 3, 3});
  CHECK(s.scores == std::vector<double>{5, 0, 3, 3});
  CHECK(s.clamped == std::vector<std::string>{"creativity", "quality"});
  CHECK_THROWS_AS(compose(TaskKind::creation, {1, 2}), ConfigError);
  CHECK_THROWS_AS(compose(TaskKind::selection, {1}), ConfigError);
}

TEST_CASE("criterion scores json round trip") {
  const CriterionScores s = compose(TaskKind::explanation, {4, 4, 3, 2, 1});
  const CriterionScores back = CriterionScores::from_json(s.to_json());
  CHECK(back.scores == s.scores);
  CHECK(back.composite_raw == s.composite_raw);
  CHECK(back.task_kind == TaskKind::explanation);
}

TEST_CASE("judge parses explanation scores") {
  auto t = replies({"Here you go: " + explanation_scores(5, 5, 5, 5, 5)});
  Gateway g(t, test::no_sleep_retry());
  Judge j(g);
  const CriterionScores s = j.judge_explanation({"Humor"}, "a pun", {"Humor"}, "gold");
  CHECK(s.composite_raw == doctest::Approx(65.0));
  CHECK(t->requests()[0].phase() == "judge.explanation");
  CHECK(t->requests()[0].prompt_text().find("gold") != std::string::npos);
}

TEST_CASE("judge re-asks once with a repair prompt, then gives up") {
  auto t = replies({"no scores here", creation_scores("2", "3", "4", "5")});
  Gateway g(t, test::no_sleep_retry());
  Judge j(g);
  CHECK(j.judge_creation("c", "ref").composite_norm == doctest::Approx(0.7));
  REQUIRE(t->requests().size() == 2);
  CHECK(t->requests()[1].prompt_text().size() > t->requests()[0].prompt_text().size());

  auto bad = replies({creation_scores("x", "3", "4", "5"), creation_scores("2", "3", "4", "")});
  Gateway g2(bad, test::no_sleep_retry());
  Judge j2(g2);
  try {
    j2.judge_creation("c", "ref");
    FAIL("expected a judge error");
  } catch (const JudgeError& e) {
    CHECK(e.raw_text().find("<impact></impact>") != std::string::npos);
  }
}

TEST_CASE("judge refuses to run without a reference") {
  auto t = replies({"x"});
  Gateway g(t, test::no_sleep_retry());
  Judge j(g);
  CHECK_THROWS_AS(j.judge_creation("c", "  "), ConfigError);
  CHECK_THROWS_AS(j.judge_explanation({}, "p", {}, ""), ConfigError);
}

TEST_CASE("online entity extraction accepts xml or a json list") {
  auto t = replies({"<entities><entity>Cat</entity><entity>cucumber!</entity></entities>", R"(sure: ["Dog", "dog"])",
                    "<entities></entities>"});
  Gateway g(t, test::no_sleep_retry());
  Judge j(g);
  const auto a = j.extract_entities("x");
  CHECK(a.mode == ExtractionMode::online);
  CHECK(a.entities == metrics::EntitySet{"cat", "cucumber"});
  CHECK(j.extract_entities("y").entities == metrics::EntitySet{"dog"});
  CHECK(j.extract_entities("z").empty);
}

TEST_CASE("offline extraction drops stop words and splits CJK on function characters") {
  const auto e = extract_entities_offline("The cat and the Cucumber!");
  CHECK(e.entities == metrics::EntitySet{"cat", "cucumber"});
  CHECK(e.mode == ExtractionMode::offline);
  const auto z = extract_entities_offline("猫的黄瓜");
  CHECK(z.entities == metrics::EntitySet{"猫", "黄瓜"});
  CHECK(extract_entities_offline("the and of").empty);
}
