#pragma once

#include "kgrec/common.hpp"
#include "kgrec/data.hpp"
#include "kgrec/kmpn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

namespace kgrec {

enum class EvalSplit { valid, test, cold_start };

inline const char* split_name(EvalSplit s) {
  switch (s) {
    case EvalSplit::valid: return "valid";
    case EvalSplit::test: return "test";
    case EvalSplit::cold_start: return "cold_start";
  }
  return "?";
}

inline EvalSplit parse_split(const std::string& s) {
  if (s == "valid") return EvalSplit::valid;
  if (s == "test") return EvalSplit::test;
  if (s == "cold_start") return EvalSplit::cold_start;
  fail("unknown split '", s, "'");
}

// Top-K items by dot-product score, excluding `mask` (sorted); ties go to the
// smaller item id. Returns fewer than K ids when the unmasked catalog is
// smaller, and sets `truncated`.
inline std::vector<Index> rank_items(const RowVec& user, const Matrix& items, const ItemList& mask, Index K,
                                     bool* truncated = nullptr) {
  if (K < 1) fail("rank_items: K must be >= 1");
  const Vector scores = items * user.transpose();
  std::vector<Index> cand;
  cand.reserve(static_cast<std::size_t>(items.rows()));
  for (Index i = 0; i < items.rows(); ++i) {
    if (!std::binary_search(mask.begin(), mask.end(), i)) cand.push_back(i);
  }
  const bool short_catalog = static_cast<Index>(cand.size()) < K;
  if (truncated) *truncated = short_catalog;
  const auto take = static_cast<std::ptrdiff_t>(std::min<std::size_t>(cand.size(), static_cast<std::size_t>(K)));
  auto better = [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(cand.begin(), cand.begin() + take, cand.end(), better);
  cand.resize(static_cast<std::size_t>(take));
  return cand;
}

namespace detail {

inline Index count_hits(const std::vector<Index>& topk, const ItemList& test) {
  Index hits = 0;
  for (Index i : topk) hits += std::binary_search(test.begin(), test.end(), i) ? 1 : 0;
  return hits;
}

inline void require_test(const ItemList& test) {
  if (test.empty()) fail("metric requires a non-empty test set");
}

}  // namespace detail

// `test` is a sorted id list.
inline double recall_at_k(const std::vector<Index>& topk, const ItemList& test) {
  detail::require_test(test);
  return static_cast<double>(detail::count_hits(topk, test)) / static_cast<double>(test.size());
}

inline double ndcg_at_k(const std::vector<Index>& topk, const ItemList& test, Index K) {
  detail::require_test(test);
  double dcg = 0.0;
  const auto n = std::min<std::size_t>(topk.size(), static_cast<std::size_t>(K));
  for (std::size_t r = 0; r < n; ++r) {
    if (std::binary_search(test.begin(), test.end(), topk[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0.0;
  const auto ideal = std::min<std::size_t>(test.size(), static_cast<std::size_t>(K));
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

inline double hit_ratio_at_k(const std::vector<Index>& topk, const ItemList& test) {
  detail::require_test(test);
  return detail::count_hits(topk, test) > 0 ? 1.0 : 0.0;
}

struct MetricsReport {
  EvalSplit split = EvalSplit::test;
  std::vector<Index> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::vector<double> hit_ratio;
  Index users_evaluated = 0;
  Index users_skipped = 0;  // empty target list or no history

  double recall_at(Index k) const { return recall.at(slot(k)); }
  double ndcg_at(Index k) const { return ndcg.at(slot(k)); }
  double hit_ratio_at(Index k) const { return hit_ratio.at(slot(k)); }

 private:
  std::size_t slot(Index k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) fail("report has no K = ", k);
    return static_cast<std::size_t>(it - ks.begin());
  }
};

struct UserMetrics {
  std::vector<double> recall, ndcg, hit;
};

inline UserMetrics user_metrics(const RowVec& user, const Matrix& items, const ItemList& mask, const ItemList& target,
                                const std::vector<Index>& ks) {
  const Index kmax = *std::max_element(ks.begin(), ks.end());
  const auto ranked = rank_items(user, items, mask, kmax);
  UserMetrics m;
  for (Index k : ks) {
    std::vector<Index> top(ranked.begin(), ranked.begin() + std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k)));
    m.recall.push_back(recall_at_k(top, target));
    m.ndcg.push_back(ndcg_at_k(top, target, k));
    m.hit.push_back(hit_ratio_at_k(top, target));
  }
  return m;
}

// Runs f(i) for i in [0, n) on up to `threads` workers.
template <typename F>
void parallel_for(Index n, int threads, F&& f) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<Index>(n, 1))));
  if (threads == 1) {
    for (Index i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (Index i = t; i < n; i += threads) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Generic evaluation. `user_embedding(u)` returns the representation of user
// u for this split. Standard splits mask train items; cold-start masks the
// cold history. Per-user results are reduced in user-id order.
template <typename UserEmbedding>
MetricsReport evaluate(UserEmbedding&& user_embedding, const Matrix& items, const InteractionStore& store,
                       EvalSplit split, const std::vector<Index>& ks, int threads = 1) {
  if (ks.empty()) fail("evaluate: no K values");
  for (Index k : ks) {
    if (k < 1) fail("evaluate: K must be >= 1");
  }
  const bool cold = split == EvalSplit::cold_start;
  if (split == EvalSplit::valid && !store.has_valid) fail("split absent: valid");
  if (split == EvalSplit::test && !store.has_test) fail("split absent: test");
  if (cold && !store.has_cold_start) fail("split absent: cold_start");
  if (items.rows() < store.num_items) fail("evaluate: item table has ", items.rows(), " rows for ", store.num_items, " items");

  const auto& targets = cold ? store.cold_test : (split == EvalSplit::valid ? store.valid : store.test);
  const auto& masks = cold ? store.cold_history : store.train;
  const Matrix catalog = items.topRows(store.num_items);

  std::vector<Index> users;
  MetricsReport rep;
  rep.split = split;
  rep.ks = ks;
  for (Index u = 0; u < store.num_users; ++u) {
    if (targets[u].empty() || masks[u].empty()) {
      if (!targets[u].empty()) ++rep.users_skipped;
      continue;
    }
    users.push_back(u);
  }
  std::vector<UserMetrics> per_user(users.size());
  parallel_for(static_cast<Index>(users.size()), threads, [&](Index k) {
    const Index u = users[k];
    per_user[k] = user_metrics(user_embedding(u), catalog, masks[u], targets[u], ks);
  });

  rep.recall.assign(ks.size(), 0.0);
  rep.ndcg.assign(ks.size(), 0.0);
  rep.hit_ratio.assign(ks.size(), 0.0);
  for (const auto& m : per_user) {
    for (std::size_t j = 0; j < ks.size(); ++j) {
      rep.recall[j] += m.recall[j];
      rep.ndcg[j] += m.ndcg[j];
      rep.hit_ratio[j] += m.hit[j];
    }
  }
  rep.users_evaluated = static_cast<Index>(users.size());
  if (rep.users_evaluated > 0) {
    const double inv = 1.0 / static_cast<double>(rep.users_evaluated);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      rep.recall[j] *= inv;
      rep.ndcg[j] *= inv;
      rep.hit_ratio[j] *= inv;
    }
  }
  return rep;
}

// Fixed user/item tables (e.g. imported content embeddings).
inline MetricsReport evaluate_embeddings(const Matrix& users, const Matrix& items, const InteractionStore& store,
                                         EvalSplit split, const std::vector<Index>& ks, int threads = 1) {
  return evaluate([&](Index u) -> RowVec { return users.row(u); }, items, store, split, ks, threads);
}

// Trained KMPN: trained attention for known users, uniform attention over
// the cold history for cold-start users.
inline MetricsReport evaluate_kmpn(const KmpnParams& p, const KnowledgeGraph& g, const InteractionStore& store,
                                   EvalSplit split, const std::vector<Index>& ks, int threads = 1) {
  p.validate(g, store.num_users);
  const auto ent = propagate_entities(p, g);
  const auto prefs = preference_embeddings(p);
  if (split == EvalSplit::cold_start) {
    return evaluate([&](Index u) { return cold_start_user(store.cold_history[u], ent.layers, prefs); }, ent.final(),
                    store, split, ks, threads);
  }
  const Matrix users = all_user_embeddings(ent, prefs, p, store);
  return evaluate_embeddings(users, ent.final(), store, split, ks, threads);
}

// Tab-separated `metric K value` rows followed by a key=value block.
inline std::string format_report(const MetricsReport& r) {
  std::string out = "metric\tK\tvalue\n";
  char buf[128];
  const std::pair<const char*, const std::vector<double>*> rows[] = {
      {"recall", &r.recall}, {"ndcg", &r.ndcg}, {"hit_ratio", &r.hit_ratio}};
  for (const auto& [name, vals] : rows) {
    for (std::size_t j = 0; j < r.ks.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%s\t%lld\t%.6f\n", name, static_cast<long long>(r.ks[j]), (*vals)[j]);
      out += buf;
    }
  }
  out += "\n";
  out += concat("split=", split_name(r.split), "\n");
  out += concat("users_evaluated=", r.users_evaluated, "\n");
  out += concat("users_skipped=", r.users_skipped, "\n");
  for (const auto& [name, vals] : rows) {
    for (std::size_t j = 0; j < r.ks.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%s@%lld=%.17g\n", name, static_cast<long long>(r.ks[j]), (*vals)[j]);
      out += buf;
    }
  }
  return out;
}

}  // namespace kgrec
