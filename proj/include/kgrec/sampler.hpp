#pragma once

#include "kgrec/common.hpp"
#include "kgrec/data.hpp"

#include <algorithm>
#include <vector>

namespace kgrec {

// Walker/Vose alias table: O(n) build, O(1) draws.
class AliasTable {
 public:
  AliasTable() = default;

  explicit AliasTable(const std::vector<double>& probs) {
    const std::size_t n = probs.size();
    if (n == 0) fail("AliasTable: empty distribution");
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = probs[i] * static_cast<double>(n);
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    // Stacks are consumed from the back; the fill order is fixed by index.
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (std::size_t i : large) prob_[i] = 1.0;
    for (std::size_t i : small) prob_[i] = 1.0;  // numerical leftovers
  }

  std::size_t size() const { return prob_.size(); }

  std::size_t sample(Rng& rng) const {
    const std::size_t column = rng.below(prob_.size());
    return rng.uniform() < prob_[column] ? column : alias_[column];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

inline constexpr int kMaxRejections = 100;

// Negative items with P(i) proportional to 1 / max(c(i), 1), where c(i) is
// the item's train interaction count.
class ReciprocalSampler {
 public:
  explicit ReciprocalSampler(std::vector<Index> counts) : counts_(std::move(counts)) {
    if (counts_.empty()) fail("ReciprocalSampler: catalog has zero items");
    probs_.resize(counts_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      probs_[i] = 1.0 / static_cast<double>(std::max<Index>(counts_[i], 1));
      total += probs_[i];
    }
    for (auto& p : probs_) p /= total;
    table_ = AliasTable(probs_);
  }

  const std::vector<double>& probabilities() const { return probs_; }
  const std::vector<Index>& counts() const { return counts_; }
  Index num_items() const { return static_cast<Index>(probs_.size()); }

  // Unconditional draw from P(i).
  Index draw(Rng& rng) const { return static_cast<Index>(table_.sample(rng)); }

  // Draw rejecting `positives` (sorted). After kMaxRejections failed draws,
  // falls back to a uniform pick among the non-positive items.
  Index sample_negative(const ItemList& positives, Rng& rng) const {
    const Index n = num_items();
    if (static_cast<Index>(positives.size()) >= n) fail("sample_negative: user positives cover the whole catalog");
    for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
      const Index item = draw(rng);
      if (!std::binary_search(positives.begin(), positives.end(), item)) return item;
    }
    const Index free = n - static_cast<Index>(positives.size());
    Index target = static_cast<Index>(rng.below(static_cast<std::uint64_t>(free)));
    for (Index i = 0; i < n; ++i) {
      if (std::binary_search(positives.begin(), positives.end(), i)) continue;
      if (target-- == 0) return i;
    }
    fail("sample_negative: no free item found");
  }

 private:
  std::vector<Index> counts_;
  std::vector<double> probs_;
  AliasTable table_;
};

inline ReciprocalSampler build_sampler(const InteractionStore& store) {
  if (store.num_items < 1) fail("build_sampler: zero items");
  std::vector<Index> counts(static_cast<std::size_t>(store.num_items), 0);
  for (const auto& list : store.train) {
    for (Index i : list) ++counts[i];
  }
  return ReciprocalSampler(std::move(counts));
}

}  // namespace kgrec
