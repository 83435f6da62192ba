#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cbench/metrics.hpp"
#include "oracles.hpp"

using namespace cbench;
using namespace cbench::metrics;
namespace oracle = cbench::test::oracle;

TEST_CASE("tokenizer splits scripts and folds full-width ASCII") {
  CHECK(tokenize("Hello, 世界! ABC１２３") == Tokens{"hello", "世", "界", "abc123"});
  CHECK(tokenize("ねこ😀cat") == Tokens{"ね", "こ", "😀", "cat"});
  CHECK(tokenize("  ...  ").empty());
  CHECK(tokenize("café au lait") == Tokens{"café", "au", "lait"});
}

TEST_CASE("accuracy and top-k") {
  CHECK(accuracy({"A", "B", "C"}, {"A", "C", "C"}) == doctest::Approx(2.0 / 3.0));
  CHECK(top_k_accuracy({{"B", "A", "C"}, {"C", "B", "A"}}, {"A", "A"}, 2) == doctest::Approx(0.5));
  CHECK_THROWS_AS(accuracy({"A"}, {}), MetricError);
  CHECK_THROWS_AS(top_k_accuracy({{"A"}}, {"A"}, 2), MetricError);
}

TEST_CASE("exact match for orders and tier maps") {
  CHECK(exact_match_accuracy(std::vector<std::vector<std::string>>{{"A", "B"}, {"B", "A"}},
                             std::vector<std::vector<std::string>>{{"A", "B"}, {"A", "B"}}) == 0.5);
  using Tiers = std::map<std::string, std::string>;
  CHECK(exact_match_accuracy(std::vector<Tiers>{{{"A", "god"}, {"B", "high"}}},
                             std::vector<Tiers>{{{"A", "god"}, {"B", "high"}}}) == 1.0);
  CHECK_THROWS_AS(exact_match_accuracy(std::vector<Tiers>{{{"A", "god"}}}, std::vector<Tiers>{{{"B", "god"}}}),
                  MetricError);
}

TEST_CASE("ndcg is 1 for the reference order and lower otherwise") {
  const std::vector<std::string> ref{"C", "A", "B"};
  CHECK(ndcg(ref, ref) == doctest::Approx(1.0));
  // gains predicted order B,A,C = 1,2,3
  const double dcg = 1.0 + 3.0 / std::log2(3.0) + 7.0 / 2.0;
  const double idcg = 7.0 + 3.0 / std::log2(3.0) + 1.0 / 2.0;
  CHECK(ndcg({"B", "A", "C"}, ref) == doctest::Approx(dcg / idcg).epsilon(1e-12));
  CHECK_THROWS_AS(ndcg({"A", "A", "B"}, ref), MetricError);
  CHECK_THROWS_AS(ndcg({"A", "B"}, ref), MetricError);
}

TEST_CASE("ndcg matches the brute-force ideal over all permutations") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + static_cast<int>(gen() % 5);
    std::vector<std::string> ref;
    for (int i = 0; i < m; ++i) ref.push_back(std::string(1, static_cast<char>('A' + i)));
    std::vector<std::string> pred = ref;
    std::shuffle(pred.begin(), pred.end(), gen);
    CHECK(std::abs(ndcg(pred, ref) - oracle::ndcg(pred, ref)) < 1e-9);
  }
}

TEST_CASE("bleu hand examples") {
  CHECK(bleu_n("the the the the", {"the cat"}, 1) == doctest::Approx(0.25));
  // c = 2 < r = 4: bp = exp(1 - 2)
  CHECK(bleu_n("the cat", {"the cat sat down"}, 1) == doctest::Approx(std::exp(-1.0)));
  CHECK(bleu_n("the cat", {"the cat sat down", "the cat"}, 2) == doctest::Approx(1.0));
  CHECK(bleu_n("a b", {"c d"}, 1) == 0.0);
  CHECK_THROWS_AS(bleu_n("", {"a"}, 1), MetricError);
}

TEST_CASE("rouge-l hand example") {
  // LCS "the cat on mat" = 4; P = 4/5, R = 4/6.
  CHECK(rouge_l("the cat sat on mat", "the cat is on the mat") == doctest::Approx(0.7155425219941348).epsilon(1e-12));
  CHECK(rouge_l("x y", "x y") == doctest::Approx(1.0));
  CHECK(rouge_l("x", "y") == 0.0);
}

TEST_CASE("bleu, rouge and lcs agree with brute-force oracles") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 300; ++trial) {
    const Tokens cand = oracle::random_tokens(gen, 1 + gen() % 9);
    std::vector<Tokens> refs;
    const std::size_t nrefs = 1 + gen() % 3;
    for (std::size_t i = 0; i < nrefs; ++i) refs.push_back(oracle::random_tokens(gen, 1 + gen() % 9));
    CHECK(lcs_length(cand, refs[0]) == oracle::lcs(cand, refs[0]));
    CHECK(std::abs(rouge_l(cand, refs[0]) - oracle::rouge_l(cand, refs[0], 1.2)) < 1e-9);
    for (int n = 1; n <= 2; ++n) CHECK(std::abs(bleu(cand, refs, n) - oracle::bleu(cand, refs, n)) < 1e-9);
  }
}

TEST_CASE("dist-1 counts distinct unigrams across texts") {
  CHECK(dist_1(std::vector<std::string>{"a b", "b c"}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(dist_1(std::vector<std::string>{"", "!"}), MetricError);
}

TEST_CASE("entity normalization") {
  CHECK(normalize_entity("  \"Cat!\" ") == "cat");
  CHECK(normalize_entity("猫。") == "猫");
  CHECK(make_entity_set({"Cat", "cat", " ", "Dog"}) == EntitySet{"cat", "dog"});
}

TEST_CASE("weo closed forms") {
  EntityWeights unit;
  CHECK(weo({"a"}, {"a"}, unit) == doctest::Approx(2.0));
  CHECK(weo({"a"}, {"b"}, unit) == doctest::Approx(0.5));
  CHECK(weo({"a", "b"}, {"b", "c"}, unit) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(weo({}, {}, unit), MetricError);
}

TEST_CASE("entity weights use inverse log document frequency") {
  const EntityWeights w = entity_weights({{"cat", "dog"}, {"cat"}, {"cat"}});
  CHECK(w.weight("cat") == doctest::Approx(1.0 / (1.0 + std::log(4.0))));
  CHECK(w.weight("dog") == doctest::Approx(1.0 / (1.0 + std::log(2.0))));
  CHECK(w.weight("unseen") == doctest::Approx(0.5906161091496412));
}

TEST_CASE("weo matches a set-algebra oracle and is symmetric") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 300; ++trial) {
    const EntitySet a = oracle::random_entities(gen), b = oracle::random_entities(gen);
    if (a.empty() && b.empty()) continue;
    const EntityWeights w = entity_weights({a, b, oracle::random_entities(gen)});
    CHECK(std::abs(weo(a, b, w) - oracle::weo(a, b, w)) < 1e-9);
    CHECK(weo(a, b, w) == weo(b, a, w));
  }
}

namespace {

struct FakeEmbedder : Embedder {
  std::optional<std::vector<std::vector<double>>> embed(const std::vector<std::string>& texts) override {
    std::vector<std::vector<double>> out;
    for (const auto& t : texts) out.push_back({t == "cat" || t == "kitten" ? 1.0 : 0.0, t == "dog" ? 1.0 : 0.0});
    return out;
  }
};

}  // namespace

TEST_CASE("embedding f1 is optional and greedy") {
  CHECK_FALSE(embedding_f1("a", "b", nullptr).has_value());
  FakeEmbedder e;
  CHECK(*embedding_f1("cat", "kitten", &e) == doctest::Approx(1.0));
  // P = (1 + 0) / 2, R = 1
  CHECK(*embedding_f1("cat dog", "kitten", &e) == doctest::Approx(2.0 / 3.0));
  CHECK(*embedding_f1("dog", "kitten", &e) == doctest::Approx(0.0));
}
