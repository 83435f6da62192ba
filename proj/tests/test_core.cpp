#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "cbench/dataset.hpp"
#include "cbench/prompts.hpp"
#include "cbench/util.hpp"
#include "cbench/xml.hpp"
#include "support.hpp"

using namespace cbench;

TEST_CASE("SeededRng below stays in range and is reproducible") {
  SeededRng a(99), b(99);
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.below(7);
    CHECK(x < 7);
    CHECK(x == b.below(7));
  }
}

TEST_CASE("SeededRng shuffle is a permutation") {
  SeededRng rng(3);
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("sample_indices draws distinct indices") {
  SeededRng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    auto idx = rng.sample_indices(10, 4);
    REQUIRE(idx.size() == 4);
    std::set<std::size_t> s(idx.begin(), idx.end());
    CHECK(s.size() == 4);
    CHECK(*s.rbegin() < 10);
  }
}

TEST_CASE("derive_seed separates salts") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("fnv1a64 known vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("utf8 decode and length") {
  CHECK(utf8_length("abc") == 3);
  CHECK(utf8_length("猫咪") == 2);
  CHECK(utf8_length("😀x") == 2);
  const auto cps = decode_utf8("é猫");
  REQUIRE(cps.size() == 2);
  CHECK(cps[0] == U'é');
  CHECK(encode_utf8(cps[1]) == "猫");
}

TEST_CASE("string helpers") {
  CHECK(trim("  hi \n") == "hi");
  CHECK(to_lower_ascii("AbC") == "abc");
  CHECK(iequals_ascii("Humor", "hUMOR"));
  CHECK(contains_icase("The Cat", "cat"));
  CHECK(split_lines("a\r\nb\n") == std::vector<std::string>{"a", "b"});
  CHECK(join({"a", "b", "c"}, ", ") == "a, b, c");
  CHECK(render_template("{{x}} and {{y}}", {{"x", "1"}, {"y", "2"}}) == "1 and 2");
}

TEST_CASE("write_file_atomic round trip") {
  test::TempDir dir;
  write_file_atomic(dir.file("x.txt"), "hello");
  CHECK(read_file(dir.file("x.txt")) == "hello");
  CHECK_THROWS_AS(read_file(dir.file("missing.txt")), Error);
}

// --- taxonomy / dataset ------------------------------------------------------

TEST_CASE("builtin taxonomy has 5 dimensions and 25 subcategories") {
  const Taxonomy& t = Taxonomy::builtin();
  CHECK(t.subcategory_count() == 25);
  CHECK(t.subcategories(Dimension::RT).size() == 9);
  CHECK(t.subcategories(Dimension::DA).size() == 3);
  CHECK(t.subcategories(Dimension::WT).size() == 6);
  CHECK(t.subcategories(Dimension::IV).size() == 4);
  CHECK(t.subcategories(Dimension::ER).size() == 3);
  CHECK(t.categories().size() == 31);
}

TEST_CASE("tag parsing accepts aliases and rejects unknown tags") {
  const Taxonomy& t = Taxonomy::builtin();
  CHECK(t.parse_tag("humor").subcategory == "Humor");
  CHECK(t.parse_tag("谐音").subcategory == "Homophonic");
  CHECK(t.parse_tag("谐音").dimension == Dimension::RT);
  CHECK(t.parse_tag("Dark Humor").dimension == Dimension::ER);
  CHECK_THROWS_AS(t.parse_tag("Sarcasm"), UnknownTagError);
}

TEST_CASE("dataset serialization round trips") {
  Dataset d;
  d.records = test::synthetic_corpus(5);
  const std::string text = serialize_dataset(d);
  const LoadResult back = parse_dataset(text);
  CHECK(back.ok());
  REQUIRE(back.dataset.records.size() == 5);
  CHECK(back.dataset.records == d.records);
  CHECK(serialize_dataset(back.dataset) == text);
}

TEST_CASE("invalid lines are reported with their line number") {
  Dataset d;
  d.records = test::synthetic_corpus(3);
  std::string text = serialize_dataset(d);
  auto lines = split_lines(text);
  json bad = json::parse(lines[1]);
  bad["comments"][0]["tags"] = json::array({{{"dimension", "RT"}, {"subcategory", "Sarcasm"}}});
  lines[1] = bad.dump();
  lines.push_back("{not json");
  const LoadResult r = parse_dataset(join(lines, "\n"));
  CHECK(r.dataset.records.size() == 2);
  REQUIRE(r.errors.size() == 2);
  CHECK(r.errors[0].line == 2);
  CHECK(r.errors[1].line == 4);
}

TEST_CASE("validation flags a record without a god comment") {
  VideoRecord r = test::synthetic_record(1);
  r.comments.erase(r.comments.begin());  // drop the god comment
  const ValidationReport rep = validate_record(r);
  CHECK_FALSE(rep.ok());
}

TEST_CASE("split sizes follow floor(N/12) for validation and test") {
  const SplitSizes s = split_sizes(67073);
  CHECK(s.validation == 5589);
  CHECK(s.test == 5589);
  CHECK(s.train == 55895);
  CHECK(split_sizes(12).validation == 1);
  CHECK(split_sizes(11).validation == 0);
}

TEST_CASE("split is a seeded partition") {
  Dataset d;
  d.records = test::synthetic_corpus(240);
  const DatasetSplit a = split_dataset(d, 7);
  const DatasetSplit b = split_dataset(d, 7);
  CHECK(a.manifest() == b.manifest());
  CHECK(a.validation.size() == 20);
  CHECK(a.test.size() == 20);
  CHECK(a.train.size() == 200);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.validation, &a.test}) {
    for (const auto& r : *part) ids.insert(r.video_id);
  }
  CHECK(ids.size() == 240);
  // Stratified: each of the 5 equally sized categories gets 4 test records.
  std::map<std::string, int> per_cat;
  for (const auto& r : a.test) ++per_cat[r.category];
  for (const auto& [c, n] : per_cat) CHECK(n == 4);
  CHECK(split_dataset(d, 8).manifest() != a.manifest());
}

// --- xml ---------------------------------------------------------------------

TEST_CASE("parse_block finds the block amid chatter") {
  const auto n = xml::parse_block("Sure! <final>Hi &amp; bye</final> hope that helps", "final");
  CHECK(n.text == "Hi & bye");
}

TEST_CASE("parse_block reads nested children and attributes") {
  const auto n = xml::parse_block(R"(<scores><candidate index="2"><a>1</a><b>2</b></candidate></scores>)", "scores");
  const auto rows = n.children_named("candidate");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0]->attribute("index") == "2");
  CHECK(rows[0]->child_text("b") == "2");
}

TEST_CASE("parse_block rejects missing or unclosed blocks") {
  CHECK_THROWS_AS(xml::parse_block("no xml here", "final"), xml::ParseError);
  CHECK_THROWS_AS(xml::parse_block("<final>open", "final"), xml::ParseError);
}

TEST_CASE("escape and decode are inverse") {
  const std::string s = "a < b & \"c\" > 'd'";
  CHECK(xml::decode_entities(xml::escape(s)) == s);
}

// --- prompts -----------------------------------------------------------------

TEST_CASE("builtin prompt pack has every template") {
  const PromptPack& p = PromptPack::builtin();
  for (const char* name : {"ripple_initiation", "ripple_focalization", "diffusion_sequential", "diffusion_jumping",
                           "diffusion_branching", "diffusion_embedded_elicit", "diffusion_embedded", "generation",
                           "wave_interference", "luminous_imprint", "repair", "task_selection", "task_ranking",
                           "task_classification", "task_explanation", "task_creation", "task_creation_five_shot",
                           "judge_explanation", "judge_creation", "entity_extraction"}) {
    CHECK_NOTHROW(p.get(name));
  }
  CHECK_THROWS_AS(p.get("nope"), ConfigError);
}

TEST_CASE("prompt directory overrides a subset") {
  test::TempDir dir;
  write_file_atomic(dir.file("repair.txt"), "fix: {{error}}");
  const PromptPack p = PromptPack::from_directory(dir.path.string());
  CHECK(p.render("repair", {{"error", "x"}, {"previous", "y"}}) == "fix: x");
  CHECK(p.get("task_selection") == PromptPack::builtin().get("task_selection"));
  CHECK(p.hash() != PromptPack::builtin().hash());
}
