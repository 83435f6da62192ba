#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <set>
#include <thread>

#include "cbench/annotation.hpp"
#include "cbench/kernels.hpp"
#include "support.hpp"

using namespace cbench;

namespace {

std::vector<TaskInstance> mixed_tasks() {
  const auto records = test::synthetic_corpus(4);
  std::vector<TaskInstance> out;
  out.push_back(build_task(records[0], TaskConfig::selection(1, 3, 1)));
  out.push_back(build_task(records[1], TaskConfig::ranking(1)));
  out.push_back(build_task(records[2], TaskConfig::classification(1)));
  out.push_back(build_task(records[3], TaskConfig::creation()));
  return out;
}

json response(const std::string& annotator, const TaskInstance& t, json payload) {
  return {{"annotator_id", annotator}, {"task_id", t.task_id}, {"payload", std::move(payload)}};
}

json correct_payload(const TaskInstance& t) {
  switch (t.kind) {
    case TaskKind::selection: return {{"label", t.key.correct_label}};
    case TaskKind::ranking: return {{"order", t.key.reference_order}};
    case TaskKind::classification: {
      json tiers = json::object();
      for (const auto& [l, tier] : t.key.tiers) tiers[l] = to_string(tier);
      return {{"tiers", tiers}};
    }
    default: return {{"text", "a human comment"}};
  }
}

/// Strings that only the hidden key could reveal.
void check_no_key_bytes(const std::string& body, const std::vector<TaskInstance>& tasks) {
  for (const char* field : {"correct_label", "reference_order", "tiers", "reference_text", "sources", "comment_id"}) {
    CHECK_MESSAGE(body.find(field) == std::string::npos, field);
  }
  for (const auto& t : tasks) {
    CHECK(body.find(t.video_id + "-g") == std::string::npos);
    if (!t.key.reference_text.empty()) CHECK(body.find(t.key.reference_text) == std::string::npos);
  }
}

}  // namespace

TEST_CASE("each annotator walks every task once in a seeded order") {
  test::TempDir dir;
  ResponseStore store(dir.file("r.jsonl"));
  const auto tasks = mixed_tasks();
  AnnotationService svc(tasks, store, 11);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const HttpReply r = svc.next_task("ann1");
    REQUIRE(r.status == 200);
    REQUIRE_FALSE(r.body["done"].get<bool>());
    const std::string id = r.body["task"]["task_id"];
    CHECK(seen.insert(id).second);
    const TaskInstance& t = *std::find_if(tasks.begin(), tasks.end(), [&](const auto& x) { return x.task_id == id; });
    CHECK(svc.submit(response("ann1", t, correct_payload(t))).status == 200);
  }
  CHECK(svc.next_task("ann1").body["done"] == true);
  CHECK(svc.progress("ann1").body["completed"] == tasks.size());
  CHECK(svc.order_for("ann1") == svc.order_for("ann1"));
  CHECK(svc.next_task("").status == 400);

  // A restarted service remembers what was finished.
  AnnotationService again(tasks, store, 11);
  CHECK(again.next_task("ann1").body["done"] == true);
  CHECK(again.next_task("ann2").body["done"] == false);
}

TEST_CASE("orders differ between annotators") {
  test::TempDir dir;
  ResponseStore store(dir.file("r.jsonl"));
  std::vector<TaskInstance> tasks;
  for (const auto& r : test::synthetic_corpus(12)) tasks.push_back(build_task(r, TaskConfig::selection(1, 1, 1)));
  AnnotationService svc(tasks, store, 11);
  CHECK(svc.order_for("a") != svc.order_for("b"));
}

TEST_CASE("submission validation") {
  test::TempDir dir;
  ResponseStore store(dir.file("r.jsonl"));
  const auto tasks = mixed_tasks();
  AnnotationService svc(tasks, store, 11);
  const TaskInstance& sel = tasks[0];
  const TaskInstance& rank = tasks[1];
  const TaskInstance& cls = tasks[2];

  CHECK(svc.submit(json::array()).status == 400);
  CHECK(svc.submit(json{{"task_id", sel.task_id}}).status == 400);
  CHECK(svc.submit(response("a", sel, {{"label", "Z"}})).status == 400);
  CHECK(svc.submit(response("", sel, {{"label", "A"}})).status == 400);
  json wrong_kind = response("a", sel, {{"label", "A"}});
  wrong_kind["kind"] = "ranking";
  CHECK(svc.submit(wrong_kind).status == 400);
  CHECK(svc.submit(json{{"annotator_id", "a"}, {"task_id", "nope"}, {"payload", json::object()}}).status == 404);

  std::vector<std::string> short_order = rank.key.reference_order;
  short_order.pop_back();
  CHECK(svc.submit(response("a", rank, {{"order", short_order}})).status == 400);
  std::vector<std::string> repeated = rank.key.reference_order;
  repeated.back() = repeated.front();
  CHECK(svc.submit(response("a", rank, {{"order", repeated}})).status == 400);

  json tiers = correct_payload(cls);
  tiers["tiers"].erase("A");
  CHECK(svc.submit(response("a", cls, tiers)).status == 400);

  CHECK(svc.submit(response("a", tasks[3], {{"text", "   "}})).status == 400);
  CHECK(store.load().empty());
}

TEST_CASE("drafts may be replaced, a second final is a conflict") {
  test::TempDir dir;
  ResponseStore store(dir.file("r.jsonl"));
  const auto tasks = mixed_tasks();
  AnnotationService svc(tasks, store, 11);
  json draft = response("a", tasks[0], {{"label", "A"}});
  draft["final"] = false;
  CHECK(svc.submit(draft).status == 200);
  CHECK(svc.progress("a").body["completed"] == 0);
  CHECK(svc.submit(response("a", tasks[0], {{"label", "B"}})).status == 200);
  CHECK(svc.submit(response("a", tasks[0], {{"label", "C"}})).status == 409);
  CHECK(store.load().size() == 2);
}

TEST_CASE("an unwritable store answers 503") {
  test::TempDir dir;
  ResponseStore store(dir.file("missing-dir/r.jsonl"));
  const auto tasks = mixed_tasks();
  AnnotationService svc(tasks, store, 11);
  const HttpReply r = svc.submit(response("a", tasks[0], correct_payload(tasks[0])));
  CHECK(r.status == 503);
  CHECK(svc.progress("a").body["completed"] == 0);
}

TEST_CASE("store skips a torn final line") {
  test::TempDir dir;
  ResponseStore store(dir.file("r.jsonl"));
  AnnotationResponse r;
  r.annotator_id = "a";
  r.task_id = "t";
  r.payload = {{"label", "A"}};
  store.append(r);
  {
    std::ofstream out(dir.file("r.jsonl"), std::ios::app);
    out << R"({"annotator_id": "a", "task_)";
  }
  const auto loaded = store.load();
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].payload == r.payload);
}

TEST_CASE("human metrics are pooled per task before averaging") {
  std::vector<TaskInstance> tasks;
  for (const auto& r : test::synthetic_corpus(2)) tasks.push_back(build_task(r, TaskConfig::selection(1, 1, 1)));
  auto resp = [&](const std::string& who, const TaskInstance& t, bool right) {
    AnnotationResponse r;
    r.annotator_id = who;
    r.task_id = t.task_id;
    r.kind = t.kind;
    const std::string wrong = t.key.correct_label == "A" ? "B" : "A";
    r.payload = {{"label", right ? t.key.correct_label : wrong}};
    return r;
  };
  // Task 1: three right. Task 2: one wrong. Per response this would be 0.75.
  const std::vector<AnnotationResponse> rs = {resp("a", tasks[0], true), resp("b", tasks[0], true),
                                              resp("c", tasks[0], true), resp("a", tasks[1], false)};
  const RunRecord h = merge_human_responses(rs, tasks);
  CHECK(h.mode == "human");
  CHECK(h.aggregates["kinds"]["selection"]["metrics"]["accuracy"].get<double>() == doctest::Approx(0.5));
  CHECK(h.aggregates["by_annotator"]["a"]["selection"]["metrics"]["accuracy"].get<double>() == doctest::Approx(0.5));
  CHECK(h.aggregates["by_annotator"]["b"]["selection"]["metrics"]["accuracy"].get<double>() == doctest::Approx(1.0));
  CHECK(h.aggregates["annotators"] == 3);
  CHECK(h.entries.size() == 4);
  CHECK_THROWS_AS(merge_human_responses({}, tasks), Error);
}

TEST_CASE("preference tasks hide their sources and yield shares") {
  std::vector<TaskInstance> creations;
  for (const auto& r : test::synthetic_corpus(2)) creations.push_back(build_creation(r));
  RunRecord run;
  run.run_id = "m1";
  for (const auto& c : creations) {
    RunEntry e;
    e.task_id = c.task_id;
    e.kind = TaskKind::creation;
    e.answer.parsed = true;
    e.answer.text = "model text for " + c.video_id;
    run.entries.push_back(e);
  }
  const auto prefs = build_preference_tasks(creations, {run}, 3);
  REQUIRE(prefs.size() == 2);
  for (const auto& p : prefs) {
    CHECK(p.options.size() == 2);
    CHECK(p.to_json().dump().find("m1") == std::string::npos);
  }

  std::vector<AnnotationResponse> rs;
  for (const auto& p : prefs) {
    AnnotationResponse r;
    r.annotator_id = "a";
    r.task_id = p.task_id;
    r.kind = TaskKind::preference;
    json scores = json::object();
    for (const auto& [label, src] : p.key.sources) scores[label] = src == "human" ? 3 : 1;
    r.payload = {{"scores", scores}};
    rs.push_back(r);
  }
  const RunRecord h = merge_human_responses(rs, prefs);
  const json& pref = h.aggregates["preference"];
  CHECK(pref["mean_score"]["human"].get<double>() == doctest::Approx(3.0));
  CHECK(pref["shares"]["human"].get<double>() == doctest::Approx(0.75));
  CHECK(pref["shares"]["m1"].get<double>() == doctest::Approx(0.25));

  // Tasks with a missing generation are left out.
  run.entries.pop_back();
  CHECK(build_preference_tasks(creations, {run}, 3).size() == 1);
}

TEST_CASE("preference payload scores must be integers 1 to 5") {
  std::vector<TaskInstance> creations{build_creation(test::synthetic_record(0))};
  RunRecord run;
  run.run_id = "m1";
  RunEntry e;
  e.task_id = creations[0].task_id;
  e.kind = TaskKind::creation;
  e.answer.parsed = true;
  e.answer.text = "x";
  run.entries.push_back(e);
  const TaskInstance p = build_preference_tasks(creations, {run}, 3)[0];
  CHECK_THROWS_AS(answer_from_payload(p, {{"scores", {{"A", 6}, {"B", 1}}}}), ConfigError);
  CHECK_THROWS_AS(answer_from_payload(p, {{"scores", {{"A", 2.5}, {"B", 1}}}}), ConfigError);
  CHECK_THROWS_AS(answer_from_payload(p, {{"scores", {{"A", 2}}}}), ConfigError);
  CHECK(answer_from_payload(p, {{"scores", {{"A", 2}, {"B", 5}}}}).scores.at("B") == 5);
}

TEST_CASE("http api end to end") {
  test::TempDir dir;
  ResponseStore store(dir.file("r.jsonl"));
  const auto tasks = mixed_tasks();
  AnnotationService svc(tasks, store, 11);
  const int port = svc.bind_any("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server([&] { svc.serve_bound(); });

  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5, 0);
  httplib::Result health;
  for (int i = 0; i < 50 && !health; ++i) health = client.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  std::vector<std::string> bodies;
  auto empty = client.Get("/api/results");
  REQUIRE(empty);
  CHECK(empty->status == 200);
  CHECK(json::parse(empty->body)["responses"] == 0);

  std::set<std::string> served;
  for (;;) {
    auto res = client.Get("/api/tasks/next?annotator=ann1");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
    bodies.push_back(res->body);
    const json body = json::parse(res->body);
    if (body["done"].get<bool>()) break;
    const std::string id = body["task"]["task_id"];
    REQUIRE(served.insert(id).second);
    const TaskInstance& t = *std::find_if(tasks.begin(), tasks.end(), [&](const auto& x) { return x.task_id == id; });

    if (t.kind == TaskKind::ranking) {
      std::vector<std::string> wrong_len = t.key.reference_order;
      wrong_len.pop_back();
      auto bad = client.Post("/api/responses", response("ann1", t, {{"order", wrong_len}}).dump(), "application/json");
      REQUIRE(bad);
      CHECK(bad->status == 400);
      bodies.push_back(bad->body);
    }
    auto ok = client.Post("/api/responses", response("ann1", t, correct_payload(t)).dump(), "application/json");
    REQUIRE(ok);
    CHECK(ok->status == 200);
    bodies.push_back(ok->body);
    auto dup = client.Post("/api/responses", response("ann1", t, correct_payload(t)).dump(), "application/json");
    REQUIRE(dup);
    CHECK(dup->status == 409);
  }
  CHECK(served.size() == tasks.size());

  auto garbage = client.Post("/api/responses", "{not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);
  auto progress = client.Get("/api/progress?annotator=ann1");
  REQUIRE(progress);
  CHECK(json::parse(progress->body)["completed"] == tasks.size());
  auto results = client.Get("/api/results");
  REQUIRE(results);
  CHECK(results->status == 200);
  const json agg = json::parse(results->body)["aggregates"];
  CHECK(agg["kinds"]["selection"]["metrics"]["accuracy"].get<double>() == doctest::Approx(1.0));
  CHECK(agg["kinds"]["ranking"]["metrics"]["ema"].get<double>() == doctest::Approx(1.0));
  auto options = client.Options("/api/responses");
  REQUIRE(options);
  CHECK(options->status == 204);

  for (const auto& b : bodies) check_no_key_bytes(b, tasks);

  svc.stop();
  server.join();
}
