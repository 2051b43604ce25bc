#pragma once

#include "kgrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace kgrec {

// Cluster-structured toy world. Items are split into contiguous clusters;
// each cluster owns a set of attribute entities and one genre entity in the
// KG. Users belong to a cluster and favour one of its attributes.
struct SyntheticSpec {
  Index num_users = 200;
  Index num_items = 300;
  Index num_clusters = 4;
  Index attributes_per_cluster = 6;
  Index attributes_per_item = 2;
  // Expected train interactions per user as a fraction of the cluster size.
  double density = 0.1;
  // Fraction of a user's history held out for valid + test.
  double held_out = 0.2;
  // Fraction of users carved out as cold-start (never trained on).
  double cold_fraction = 0.03;
  // Probability that an interaction lands outside the user's cluster.
  double noise = 0.05;
  // Weight multiplier for items carrying the user's favourite attribute.
  double attribute_affinity = 4.0;
  // Within-cluster popularity decays as 1 / (rank + 1)^zipf.
  double zipf = 0.5;
  Index tokens_per_cluster = 24;
  Index tokens_per_attribute = 6;
};

struct SyntheticDataset {
  Dataset data;
  std::vector<Index> user_cluster;
  std::vector<Index> item_cluster;
  std::vector<Index> user_attribute;
  std::vector<std::vector<Index>> item_attributes;
};

inline void validate(const SyntheticSpec& s) {
  if (!(s.density > 0.0) || s.density > 1.0) fail("synthetic spec: density ", s.density, " not in (0, 1]");
  if (s.num_clusters < 1) fail("synthetic spec: need at least one cluster");
  if (s.num_clusters > s.num_items) fail("synthetic spec: ", s.num_clusters, " clusters exceed ", s.num_items, " items");
  if (s.num_clusters > s.num_users) fail("synthetic spec: ", s.num_clusters, " clusters exceed ", s.num_users, " users");
  if (s.attributes_per_cluster < 1 || s.attributes_per_item < 1 ||
      s.attributes_per_item > s.attributes_per_cluster) {
    fail("synthetic spec: attributes_per_item must be in [1, attributes_per_cluster]");
  }
  if (s.held_out < 0.0 || s.held_out >= 1.0) fail("synthetic spec: held_out must be in [0, 1)");
  if (s.cold_fraction < 0.0 || s.cold_fraction >= 1.0) fail("synthetic spec: cold_fraction must be in [0, 1)");
  if (s.noise < 0.0 || s.noise > 1.0) fail("synthetic spec: noise must be in [0, 1]");
  if (s.tokens_per_cluster < 1 || s.tokens_per_attribute < 1) fail("synthetic spec: token pools must be non-empty");
}

namespace detail {

// Weighted draw without replacement among candidates with positive weight.
inline Index draw_weighted(std::vector<double>& weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) return -1;
  double x = rng.uniform() * total;
  Index last = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last = static_cast<Index>(i);
    if (x < weights[i]) break;
    x -= weights[i];
  }
  weights[last] = 0.0;
  return last;
}

inline ItemList sorted(ItemList l) {
  std::sort(l.begin(), l.end());
  return l;
}

}  // namespace detail

inline SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  const Index C = spec.num_clusters;
  const Index A = spec.attributes_per_cluster;
  const Index NI = spec.num_items;
  const Index NU = spec.num_users;

  SyntheticDataset out;
  out.item_cluster.resize(NI);
  std::vector<std::vector<Index>> cluster_items(C);
  for (Index i = 0; i < NI; ++i) {
    out.item_cluster[i] = i * C / NI;
    cluster_items[out.item_cluster[i]].push_back(i);
  }

  // Entities: items, then C*A attribute entities, then C genre entities.
  const Index attr_base = NI;
  const Index genre_base = NI + C * A;
  const Index num_entities = genre_base + C;
  std::vector<std::array<Index, 3>> triplets;
  out.item_attributes.resize(NI);
  for (Index i = 0; i < NI; ++i) {
    const Index c = out.item_cluster[i];
    std::vector<Index> attrs(A);
    std::iota(attrs.begin(), attrs.end(), 0);
    rng.shuffle(attrs);
    attrs.resize(spec.attributes_per_item);
    std::sort(attrs.begin(), attrs.end());
    out.item_attributes[i] = attrs;
    for (Index a : attrs) triplets.push_back({i, 0, attr_base + c * A + a});
    triplets.push_back({i, 1, genre_base + c});
  }
  out.data.graph = KnowledgeGraph(num_entities, 2, triplets);

  // Popularity: a random within-cluster rank order with a power-law weight.
  std::vector<double> popularity(NI, 1.0);
  for (Index c = 0; c < C; ++c) {
    auto order = cluster_items[c];
    rng.shuffle(order);
    for (std::size_t r = 0; r < order.size(); ++r) {
      popularity[order[r]] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf);
    }
  }

  InteractionStore& s = out.data.store;
  s.num_users = NU;
  s.num_items = NI;
  for (auto split : {Split::train, Split::valid, Split::test, Split::cold_history, Split::cold_test}) {
    s.lists(split).assign(NU, {});
  }
  s.has_valid = true;
  s.has_test = true;

  const Index num_cold = static_cast<Index>(std::floor(spec.cold_fraction * static_cast<double>(NU)));
  s.has_cold_start = num_cold > 0;
  std::vector<char> is_cold(NU, 0);
  {
    std::vector<Index> users(NU);
    std::iota(users.begin(), users.end(), 0);
    rng.shuffle(users);
    for (Index k = 0; k < num_cold; ++k) is_cold[users[k]] = 1;
  }

  out.user_cluster.resize(NU);
  out.user_attribute.resize(NU);
  for (Index u = 0; u < NU; ++u) {
    const Index c = u % C;
    const Index fav = static_cast<Index>(rng.below(A));
    out.user_cluster[u] = c;
    out.user_attribute[u] = fav;

    const double cluster_size = static_cast<double>(cluster_items[c].size());
    const double mean_train = spec.density * cluster_size;
    // Jitter the train count uniformly in [0.5, 1.5] x mean, at least one.
    const Index n_train = std::max<Index>(1, std::llround(mean_train * rng.uniform(0.5, 1.5)));
    const Index n_held = static_cast<Index>(
        std::ceil(static_cast<double>(n_train) * spec.held_out / (1.0 - spec.held_out)));
    const Index n_total = std::min<Index>(n_train + n_held, NI);

    std::vector<double> in_w(NI, 0.0);
    std::vector<double> out_w(NI, 0.0);
    for (Index i = 0; i < NI; ++i) {
      if (out.item_cluster[i] == c) {
        const auto& attrs = out.item_attributes[i];
        const bool fav_item = std::find(attrs.begin(), attrs.end(), fav) != attrs.end();
        in_w[i] = popularity[i] * (fav_item ? spec.attribute_affinity : 1.0);
      } else {
        out_w[i] = 1.0;
      }
    }
    ItemList sequence;
    while (static_cast<Index>(sequence.size()) < n_total) {
      const bool off_cluster = rng.uniform() < spec.noise;
      Index item = detail::draw_weighted(off_cluster ? out_w : in_w, rng);
      if (item < 0) item = detail::draw_weighted(off_cluster ? in_w : out_w, rng);
      in_w[item] = 0.0;
      out_w[item] = 0.0;
      sequence.push_back(item);
    }

    // Draw order stands in for time: first part trains, the tail is held out.
    if (is_cold[u]) {
      const auto n_hist = std::max<Index>(1, std::llround(0.8 * static_cast<double>(sequence.size())));
      s.cold_history[u] = detail::sorted({sequence.begin(), sequence.begin() + n_hist});
      s.cold_test[u] = detail::sorted({sequence.begin() + n_hist, sequence.end()});
    } else {
      const Index tr = std::min<Index>(n_train, static_cast<Index>(sequence.size()));
      const Index held = static_cast<Index>(sequence.size()) - tr;
      const Index n_valid = held / 2;
      s.train[u] = detail::sorted({sequence.begin(), sequence.begin() + tr});
      s.valid[u] = detail::sorted({sequence.begin() + tr, sequence.begin() + tr + n_valid});
      s.test[u] = detail::sorted({sequence.begin() + tr + n_valid, sequence.end()});
    }
  }
  validate(s);

  // Item texts: cluster vocabulary, attribute vocabulary, a little shared filler.
  static const char* const filler[] = {"the", "a", "story", "of", "and", "with", "new", "classic"};
  for (Index i = 0; i < NI; ++i) {
    const Index c = out.item_cluster[i];
    std::string text;
    auto add = [&](const std::string& tok) {
      if (!text.empty()) text += ' ';
      text += tok;
    };
    for (int k = 0; k < 5; ++k) add(concat("c", c, "w", rng.below(spec.tokens_per_cluster)));
    for (Index a : out.item_attributes[i]) {
      for (int k = 0; k < 3; ++k) add(concat("a", c, "x", a, "w", rng.below(spec.tokens_per_attribute)));
    }
    for (int k = 0; k < 2; ++k) add(filler[rng.below(std::size(filler))]);
    out.data.corpus.texts.emplace(i, std::move(text));
  }
  return out;
}

}  // namespace kgrec
