#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cbench/util.hpp"

namespace cbench::metrics {

class MetricError : public Error {
 public:
  using Error::Error;
};

using Tokens = std::vector<std::string>;

/// Han, kana, hangul and emoji code points are one token each; runs of ASCII
/// letters/digits (lower-cased) and of other letters form one token;
/// whitespace and punctuation separate tokens and are dropped. Full-width
/// ASCII is folded to ASCII first.
Tokens tokenize(std::string_view text);

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& keys);

/// Hit when the key is among the first k labels of the ranked prediction.
double top_k_accuracy(const std::vector<std::vector<std::string>>& ranked_predictions,
                      const std::vector<std::string>& keys, std::size_t k);

/// Ranking permutations (or any ordered structure) must match element-wise.
double exact_match_accuracy(const std::vector<std::vector<std::string>>& predicted,
                            const std::vector<std::vector<std::string>>& keys);
/// Tier assignments: label -> tier name. Both sides must cover the same labels.
double exact_match_accuracy(const std::vector<std::map<std::string, std::string>>& predicted,
                            const std::vector<std::map<std::string, std::string>>& keys);

/// Gain of the option at reference rank r (1-based) among m is m - r + 1;
/// DCG = sum (2^gain - 1) / log2(i + 1) over predicted positions i = 1..m.
double ndcg(const std::vector<std::string>& predicted_order, const std::vector<std::string>& reference_order);
/// Same, from the gains listed in predicted order.
double ndcg_from_gains(const std::vector<int>& gains_in_predicted_order);

/// Clipped n-gram precision over orders 1..n (geometric mean, no smoothing)
/// times the brevity penalty exp(1 - r/c) when c < r, with r the reference
/// length closest to c (ties: the shorter one).
double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int n);
double bleu_n(std::string_view candidate, const std::vector<std::string>& references, int n);

/// Distinct unigrams over total unigrams across all texts.
double dist_1(const std::vector<Tokens>& texts);
double dist_1(const std::vector<std::string>& texts);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
/// LCS F-measure (1 + b^2) P R / (R + b^2 P).
double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2);
double rouge_l(std::string_view candidate, std::string_view reference, double beta = 1.2);

using EntitySet = std::set<std::string>;

/// Case-fold ASCII and strip surrounding punctuation and whitespace.
std::string normalize_entity(std::string_view raw);
/// Normalizes and deduplicates; empty names are dropped.
EntitySet make_entity_set(const std::vector<std::string>& raw);

struct EntityWeights {
  std::map<std::string, double> weights;
  double default_weight = 1.0;

  double weight(const std::string& entity) const;
};

/// 1 / (1 + ln(1 + df)).
double inverse_log_weight(double df);

/// df counts the reference sets containing each entity; unseen entities get
/// the df = 1 weight.
EntityWeights entity_weights(const std::vector<EntitySet>& reference_corpus);

/// (1 + sum of w over gen & ref) / (sum of w over gen | ref).
double weo(const EntitySet& generated, const EntitySet& reference, const EntityWeights& w);

/// Per-token embeddings for a batch of texts; nullopt when the endpoint is
/// unavailable.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::optional<std::vector<std::vector<double>>> embed(const std::vector<std::string>& texts) = 0;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// Greedy token matching: precision averages each candidate token's best
/// cosine against the reference tokens, recall the reverse. Cosines below 0
/// count as 0. nullopt when no embedder is configured or it fails.
std::optional<double> embedding_f1(std::string_view candidate, std::string_view reference, Embedder* embedder);

}  // namespace cbench::metrics
