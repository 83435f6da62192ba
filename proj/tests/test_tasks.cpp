#include <doctest.h>

#include <algorithm>
#include <set>

#include "cbench/kernels.hpp"
#include "cbench/tasks.hpp"
#include "support.hpp"

using namespace cbench;

namespace {

std::set<std::string> ids_of(const TaskInstance& t) {
  std::set<std::string> s;
  for (const auto& o : t.options) s.insert(o.comment_id);
  return s;
}

const Comment& comment(const VideoRecord& r, const std::string& id) {
  for (const auto& c : r.comments) {
    if (c.comment_id == id) return c;
  }
  FAIL("no comment " << id);
  return r.comments.front();
}

}  // namespace

TEST_CASE("selection [1,m,n] presents the god comment, m highs and n ordinaries") {
  const VideoRecord r = test::synthetic_record(4);
  for (auto [m, n] : {std::pair{1, 1}, std::pair{1, 3}, std::pair{3, 5}}) {
    const TaskInstance t = build_task(r, TaskConfig::selection(m, n, 5));
    REQUIRE(t.options.size() == static_cast<std::size_t>(1 + m + n));
    int gods = 0, highs = 0, ords = 0;
    for (const auto& o : t.options) {
      const Comment& c = comment(r, o.comment_id);
      CHECK(o.text == c.text);
      gods += c.tier == Tier::god;
      highs += c.tier == Tier::high;
      ords += c.tier == Tier::ordinary;
    }
    CHECK(gods == 1);
    CHECK(highs == m);
    CHECK(ords == n);
    CHECK(comment(r, t.options[static_cast<std::size_t>(t.key.correct_label[0] - 'A')].comment_id).tier == Tier::god);
  }
}

TEST_CASE("high distractors come from the 2m most-liked highs") {
  const VideoRecord r = test::synthetic_record(8, 6, 4);
  std::set<std::string> allowed = {"v00008-h0", "v00008-h1"};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TaskInstance t = build_selection(r, TaskConfig::selection(1, 1), seed);
    for (const auto& id : ids_of(t)) {
      if (comment(r, id).tier == Tier::high) CHECK(allowed.count(id) == 1);
    }
  }
}

TEST_CASE("ranking key orders by likes and starts with the god comment") {
  const VideoRecord r = test::synthetic_record(3);
  const TaskInstance t = build_ranking(r, 9);
  REQUIRE(t.options.size() == 5);
  REQUIRE(t.key.reference_order.size() == 5);
  std::int64_t prev = std::numeric_limits<std::int64_t>::max();
  for (const auto& label : t.key.reference_order) {
    const auto& o = t.options[static_cast<std::size_t>(label[0] - 'A')];
    const auto likes = comment(r, o.comment_id).likes;
    CHECK(likes < prev);
    prev = likes;
  }
  CHECK(comment(r, t.options[static_cast<std::size_t>(t.key.reference_order[0][0] - 'A')].comment_id).tier ==
        Tier::god);
}

TEST_CASE("ranking skips a record whose god comment is out-liked by a drawn high") {
  VideoRecord r = test::synthetic_record(3);
  for (auto& c : r.comments) {
    if (c.tier == Tier::high) c.likes = 10'000'000;
  }
  CHECK_THROWS_AS(build_ranking(r, 1), TaskSkipped);
}

TEST_CASE("classification key records each option's tier") {
  const VideoRecord r = test::synthetic_record(6);
  const TaskInstance t = build_classification(r, 2);
  REQUIRE(t.options.size() == 9);
  for (const auto& o : t.options) CHECK(t.key.tiers.at(o.label) == comment(r, o.comment_id).tier);
}

TEST_CASE("too few comments are reported, not thrown past the kernel") {
  std::vector<VideoRecord> records = test::synthetic_corpus(4);
  records[1] = test::synthetic_record(1, 0, 8);
  records[2] = test::synthetic_record(2, 6, 2);
  const TaskBatch batch = serial::build_tasks(records, TaskConfig::selection(1, 3, 1));
  CHECK(batch.tasks.size() == 2);
  REQUIRE(batch.skipped.size() == 2);
  CHECK(batch.skipped[0].video_id == "v00001");
  CHECK(batch.skipped[0].reason.find("high") != std::string::npos);
  CHECK(batch.skipped[1].reason.find("ordinary") != std::string::npos);
}

TEST_CASE("explanation needs tags and a gold explanation") {
  VideoRecord r = test::synthetic_record(0);
  const TaskInstance t = build_explanation(r);
  CHECK(t.key.gold_tags.size() == 2);
  CHECK(std::is_sorted(t.key.gold_tags.begin(), t.key.gold_tags.end()));
  r.comments[0].explanation = " ";
  CHECK_THROWS_AS(build_explanation(r), TaskSkipped);
}

TEST_CASE("task configs outside the grid are rejected") {
  CHECK_THROWS_AS(TaskConfig::selection(0, 0).validate(), ConfigError);
  CHECK_THROWS_AS(TaskConfig::selection(20, 10).validate(), ConfigError);
  CHECK_NOTHROW(TaskConfig::selection(3, 5).validate());
}

TEST_CASE("manifest lines never carry the key") {
  const TaskInstance t = build_task(test::synthetic_record(2), TaskConfig::selection(1, 1, 3));
  const std::string manifest = t.to_json().dump();
  CHECK(manifest.find("correct_label") == std::string::npos);
  CHECK(manifest.find("comment_id") == std::string::npos);
  const TaskInstance back = task_from_json(t.to_json());
  CHECK(back.options.size() == t.options.size());
  CHECK(key_from_json(t.key_json(), t.kind) == t.key);
}

TEST_CASE("manifest round trip for every kind") {
  const VideoRecord r = test::synthetic_record(9);
  for (const TaskConfig& cfg : {TaskConfig::selection(1, 3, 1), TaskConfig::ranking(1), TaskConfig::classification(1),
                                TaskConfig::explanation(), TaskConfig::creation()}) {
    TaskInstance t = build_task(r, cfg);
    TaskInstance back = task_from_json(t.to_json());
    back.key = key_from_json(t.key_json(), t.kind);
    for (auto& o : t.options) o.comment_id.clear();
    CHECK(back == t);
  }
}

TEST_CASE("serial and parallel task building agree") {
  const auto records = test::synthetic_corpus(300);
  const TaskConfig cfg = TaskConfig::selection(1, 3, 77);
  const TaskBatch a = serial::build_tasks(records, cfg);
  const TaskBatch b = parallel::build_tasks(records, cfg);
  CHECK(a.tasks == b.tasks);
}

TEST_CASE("describe_context skips empty fields") {
  TaskContext c;
  c.title = "T";
  c.duration_s = 12.5;
  CHECK(describe_context(c) == "Title: T\nDuration: 12.5 s");
}

// --- few-shot ------------------------------------------------------------------

TEST_CASE("few-shot falls back from category to tag to the whole pool") {
  auto train = test::synthetic_corpus(60);
  const VideoRecord target = test::synthetic_record(1000);  // category index 0
  CHECK(select_few_shot(target, train, 1).source == FewShotSource::category);

  std::vector<VideoRecord> few_same;
  int kept = 0;
  for (const auto& r : train) {
    if (r.category != target.category || kept++ < 3) few_same.push_back(r);
  }
  // Only 3 same-category videos remain; tags still overlap widely.
  const auto sel = select_few_shot(target, few_same, 1);
  CHECK(sel.source != FewShotSource::category);
  CHECK(sel.examples.size() == 5);

  std::vector<VideoRecord> tiny(train.begin(), train.begin() + 4);
  const auto all = select_few_shot(target, tiny, 1);
  CHECK(all.source == FewShotSource::all);
  CHECK(all.examples.size() == 4);
  CHECK_THROWS_AS(select_few_shot(target, {}, 1), ConfigError);
}

TEST_CASE("attach_few_shot excludes option texts") {
  auto train = test::synthetic_corpus(30);
  VideoRecord target = test::synthetic_record(500);
  TaskInstance t = build_creation(target);
  t.options.push_back({"A", "", train[5].comments[0].text});
  attach_few_shot(t, target, train, 4);
  for (const auto& ex : t.fewshot) CHECK(ex.text != train[5].comments[0].text);
}
