#include "cbench/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>

namespace cbench::metrics {

namespace {

enum class CharClass { separator, single, run };

bool in(char32_t c, char32_t lo, char32_t hi) { return c >= lo && c <= hi; }

char32_t fold_fullwidth(char32_t c) {
  if (in(c, 0xFF01, 0xFF5E)) return c - 0xFEE0;
  if (c == 0x3000) return U' ';
  return c;
}

CharClass classify(char32_t c) {
  if (c < 0x80) {
    return std::isalnum(static_cast<int>(c)) ? CharClass::run : CharClass::separator;
  }
  if (in(c, 0x4E00, 0x9FFF) || in(c, 0x3400, 0x4DBF) || in(c, 0x20000, 0x2FFFF) || in(c, 0xF900, 0xFAFF) ||
      in(c, 0x3040, 0x30FF) || in(c, 0x31F0, 0x31FF) || in(c, 0xAC00, 0xD7AF) || in(c, 0x1100, 0x11FF) ||
      in(c, 0x3130, 0x318F) || in(c, 0x1F000, 0x1FAFF) || in(c, 0x2600, 0x27BF) || c == 0x3007) {
    return CharClass::single;
  }
  if (in(c, 0x80, 0xBF) || c == 0xD7 || c == 0xF7 || in(c, 0x2000, 0x206F) || in(c, 0x2190, 0x23FF) ||
      in(c, 0x2500, 0x25FF) || in(c, 0x3000, 0x303F) || in(c, 0xFE00, 0xFE6F) || in(c, 0xFF00, 0xFF65) ||
      in(c, 0xE0000, 0xE007F)) {
    return CharClass::separator;  // punctuation, symbols, variation selectors, joiners
  }
  return CharClass::run;
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw MetricError(std::string(what) + ": prediction and key counts differ");
  if (a == 0) throw MetricError(std::string(what) + ": no items");
}

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                             t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string run;
  auto flush = [&] {
    if (!run.empty()) out.push_back(std::move(run));
    run.clear();
  };
  for (char32_t raw : decode_utf8(text)) {
    const char32_t c = fold_fullwidth(raw);
    switch (classify(c)) {
      case CharClass::separator:
        flush();
        break;
      case CharClass::single:
        flush();
        out.push_back(encode_utf8(c));
        break;
      case CharClass::run:
        if (c < 0x80) run += static_cast<char>(std::tolower(static_cast<int>(c)));
        else run += encode_utf8(c);
        break;
    }
  }
  flush();
  return out;
}

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& keys) {
  require_same_size(predictions.size(), keys.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) hits += predictions[i] == keys[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(keys.size());
}

double top_k_accuracy(const std::vector<std::vector<std::string>>& ranked_predictions,
                      const std::vector<std::string>& keys, std::size_t k) {
  require_same_size(ranked_predictions.size(), keys.size(), "top_k_accuracy");
  if (k == 0) throw MetricError("top_k_accuracy: k must be >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& p = ranked_predictions[i];
    if (p.size() < k) throw MetricError("top_k_accuracy: prediction lists fewer than k labels");
    hits += std::find(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(k), keys[i]) != p.begin() + static_cast<std::ptrdiff_t>(k);
  }
  return static_cast<double>(hits) / static_cast<double>(keys.size());
}

double exact_match_accuracy(const std::vector<std::vector<std::string>>& predicted,
                            const std::vector<std::vector<std::string>>& keys) {
  require_same_size(predicted.size(), keys.size(), "exact_match_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (predicted[i].size() != keys[i].size()) throw MetricError("exact_match_accuracy: shape mismatch");
    hits += predicted[i] == keys[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(keys.size());
}

double exact_match_accuracy(const std::vector<std::map<std::string, std::string>>& predicted,
                            const std::vector<std::map<std::string, std::string>>& keys) {
  require_same_size(predicted.size(), keys.size(), "exact_match_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& p = predicted[i];
    const auto& k = keys[i];
    if (p.size() != k.size() ||
        !std::equal(p.begin(), p.end(), k.begin(), [](const auto& a, const auto& b) { return a.first == b.first; })) {
      throw MetricError("exact_match_accuracy: shape mismatch");
    }
    hits += p == k ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(keys.size());
}

double ndcg_from_gains(const std::vector<int>& gains) {
  if (gains.empty()) throw MetricError("ndcg: no options");
  auto dcg = [](const std::vector<int>& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      s += (std::exp2(static_cast<double>(g[i])) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return s;
  };
  std::vector<int> ideal = gains;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  if (idcg <= 0.0) throw MetricError("ndcg: all gains are zero");
  return dcg(gains) / idcg;
}

double ndcg(const std::vector<std::string>& predicted_order, const std::vector<std::string>& reference_order) {
  const std::size_t m = reference_order.size();
  if (predicted_order.size() != m || m == 0) throw MetricError("ndcg: predicted order is not a permutation");
  std::map<std::string, int> gain;
  for (std::size_t r = 0; r < m; ++r) {
    if (!gain.emplace(reference_order[r], static_cast<int>(m - r)).second) {
      throw MetricError("ndcg: duplicate label in reference order");
    }
  }
  std::vector<int> gains;
  std::set<std::string> seen;
  for (const auto& label : predicted_order) {
    auto it = gain.find(label);
    if (it == gain.end() || !seen.insert(label).second) throw MetricError("ndcg: predicted order is not a permutation");
    gains.push_back(it->second);
  }
  return ndcg_from_gains(gains);
}

double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  if (candidate.empty()) throw MetricError("bleu: empty candidate");
  if (references.empty()) throw MetricError("bleu: no references");
  if (n < 1 || n > 4) throw MetricError("bleu: n must be in 1..4");

  double log_sum = 0.0;
  for (int order = 1; order <= n; ++order) {
    const auto cand = ngram_counts(candidate, static_cast<std::size_t>(order));
    if (cand.empty()) return 0.0;
    std::map<Tokens, std::size_t> max_ref;
    for (const auto& ref : references) {
      for (const auto& [g, c] : ngram_counts(ref, static_cast<std::size_t>(order))) {
        max_ref[g] = std::max(max_ref[g], c);
      }
    }
    std::size_t clipped = 0, total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }

  const double c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references.front().size());
  for (const auto& ref : references) {
    const double len = static_cast<double>(ref.size());
    const double d = std::abs(len - c), best = std::abs(r - c);
    if (d < best || (d == best && len < r)) r = len;
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / n);
}

double bleu_n(std::string_view candidate, const std::vector<std::string>& references, int n) {
  std::vector<Tokens> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(tokenize(r));
  return bleu(tokenize(candidate), refs, n);
}

double dist_1(const std::vector<Tokens>& texts) {
  std::set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& t : texts) {
    total += t.size();
    distinct.insert(t.begin(), t.end());
  }
  if (total == 0) throw MetricError("dist_1: no tokens in the generated set");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double dist_1(const std::vector<std::string>& texts) {
  std::vector<Tokens> tok;
  tok.reserve(texts.size());
  for (const auto& t : texts) tok.push_back(tokenize(t));
  return dist_1(tok);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() || reference.empty()) throw MetricError("rouge_l: empty input");
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l(std::string_view candidate, std::string_view reference, double beta) {
  return rouge_l(tokenize(candidate), tokenize(reference), beta);
}

std::string normalize_entity(std::string_view raw) {
  auto cps = decode_utf8(raw);
  auto is_edge = [](char32_t c) {
    const char32_t f = fold_fullwidth(c);
    return classify(f) == CharClass::separator && !(f < 0x80 && std::isalnum(static_cast<int>(f)));
  };
  std::size_t b = 0, e = cps.size();
  while (b < e && is_edge(cps[b])) ++b;
  while (e > b && is_edge(cps[e - 1])) --e;
  std::string out;
  for (std::size_t i = b; i < e; ++i) {
    const char32_t c = cps[i];
    out += c < 0x80 ? std::string(1, static_cast<char>(std::tolower(static_cast<int>(c)))) : encode_utf8(c);
  }
  return out;
}

EntitySet make_entity_set(const std::vector<std::string>& raw) {
  EntitySet out;
  for (const auto& r : raw) {
    std::string n = normalize_entity(r);
    if (!n.empty()) out.insert(std::move(n));
  }
  return out;
}

double EntityWeights::weight(const std::string& entity) const {
  auto it = weights.find(entity);
  return it == weights.end() ? default_weight : it->second;
}

double inverse_log_weight(double df) { return 1.0 / (1.0 + std::log1p(df)); }

EntityWeights entity_weights(const std::vector<EntitySet>& reference_corpus) {
  std::map<std::string, int> df;
  for (const auto& set : reference_corpus) {
    for (const auto& e : set) ++df[e];
  }
  EntityWeights w;
  w.default_weight = inverse_log_weight(1.0);
  for (const auto& [e, n] : df) w.weights[e] = inverse_log_weight(n);
  return w;
}

double weo(const EntitySet& generated, const EntitySet& reference, const EntityWeights& w) {
  if (generated.empty() && reference.empty()) throw MetricError("weo: both entity sets are empty");
  double inter = 0.0, uni = 0.0;
  // Sum in sorted union order so the result does not depend on argument order.
  auto g = generated.begin();
  auto r = reference.begin();
  while (g != generated.end() || r != reference.end()) {
    if (r == reference.end() || (g != generated.end() && *g < *r)) {
      uni += w.weight(*g++);
    } else if (g == generated.end() || *r < *g) {
      uni += w.weight(*r++);
    } else {
      const double x = w.weight(*g);
      inter += x;
      uni += x;
      ++g;
      ++r;
    }
  }
  return (1.0 + inter) / uni;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw MetricError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::optional<double> embedding_f1(std::string_view candidate, std::string_view reference, Embedder* embedder) {
  if (!embedder) return std::nullopt;
  const Tokens c = tokenize(candidate), r = tokenize(reference);
  if (c.empty() || r.empty()) throw MetricError("embedding_f1: empty input");
  std::vector<std::string> batch = c;
  batch.insert(batch.end(), r.begin(), r.end());
  auto vecs = embedder->embed(batch);
  if (!vecs || vecs->size() != batch.size()) return std::nullopt;

  auto greedy = [&](std::size_t from, std::size_t from_n, std::size_t to, std::size_t to_n) {
    double sum = 0;
    for (std::size_t i = 0; i < from_n; ++i) {
      double best = 0;
      for (std::size_t j = 0; j < to_n; ++j) best = std::max(best, cosine((*vecs)[from + i], (*vecs)[to + j]));
      sum += std::min(best, 1.0);
    }
    return sum / static_cast<double>(from_n);
  };
  const double p = greedy(0, c.size(), c.size(), r.size());
  const double rec = greedy(c.size(), r.size(), 0, c.size());
  if (p + rec == 0) return 0.0;
  return 2 * p * rec / (p + rec);
}

}  // namespace cbench::metrics
