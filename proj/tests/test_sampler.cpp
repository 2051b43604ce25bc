#include "support.hpp"

#include <gtest/gtest.h>

using namespace testing_support;

TEST(Sampler, ReciprocalProbabilities) {
  const ReciprocalSampler s({1, 1, 2});
  EXPECT_NEAR(s.probabilities()[0], 0.4, 1e-15);
  EXPECT_NEAR(s.probabilities()[1], 0.4, 1e-15);
  EXPECT_NEAR(s.probabilities()[2], 0.2, 1e-15);
}

TEST(Sampler, SingleItemCatalog) {
  const ReciprocalSampler s({5});
  EXPECT_EQ(s.probabilities()[0], 1.0);
}

TEST(Sampler, ZeroCountsClampToOne) {
  const ReciprocalSampler s({0, 2});
  EXPECT_NEAR(s.probabilities()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.probabilities()[1], 1.0 / 3.0, 1e-15);
}

TEST(Sampler, EmptyCatalogThrows) { EXPECT_THROW(ReciprocalSampler({}), Error); }

TEST(Sampler, ProbabilitiesSumToOne) {
  Rng rng(1);
  std::vector<Index> counts(40);
  for (auto& c : counts) c = static_cast<Index>(rng.below(30));
  const ReciprocalSampler s(counts);
  double sum = 0.0;
  for (double p : s.probabilities()) {
    EXPECT_GT(p, 0.0);
    sum += p;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Sampler, ForcedNegative) {
  const ReciprocalSampler s({3, 1});
  Rng rng(2);
  for (int t = 0; t < 200; ++t) EXPECT_EQ(s.sample_negative({0}, rng), 1);
}

TEST(Sampler, AllPositiveThrows) {
  const ReciprocalSampler s({1, 1, 1});
  Rng rng(3);
  EXPECT_THROW(s.sample_negative({0, 1, 2}, rng), Error);
}

TEST(Sampler, EmpiricalFrequenciesMatch) {
  const ReciprocalSampler s({1, 1, 2});
  Rng rng(4);
  std::vector<Index> hits(3, 0);
  const int n = 100000;
  for (int t = 0; t < n; ++t) ++hits[s.sample_negative({}, rng)];
  const double want[] = {0.4, 0.4, 0.2};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(static_cast<double>(hits[i]) / n, want[i], 0.01);
}

TEST(Sampler, ChiSquareGoodnessOfFit) {
  Rng gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Index len = 2 + static_cast<Index>(gen.below(49));
    std::vector<Index> counts(static_cast<std::size_t>(len));
    for (auto& c : counts) c = static_cast<Index>(gen.below(20));
    const ReciprocalSampler s(counts);
    Rng rng(100 + trial);
    const int n = 100000;
    std::vector<double> obs(static_cast<std::size_t>(len), 0.0);
    for (int t = 0; t < n; ++t) obs[s.draw(rng)] += 1.0;
    double chi2 = 0.0;
    for (Index i = 0; i < len; ++i) {
      const double e = n * s.probabilities()[i];
      chi2 += (obs[i] - e) * (obs[i] - e) / e;
    }
    EXPECT_LT(chi2, chi2_critical_0001(len - 1)) << "trial " << trial << " length " << len;
  }
}

TEST(Sampler, NeverReturnsPositives) {
  Rng rng(6);
  std::vector<Index> counts(30, 1);
  counts[3] = 0;
  const ReciprocalSampler s(counts);
  for (int t = 0; t < 100; ++t) {
    ItemList pos;
    for (Index i = 0; i < 30; ++i) {
      if (rng.uniform() < 0.8) pos.push_back(i);
    }
    if (pos.size() == 30) pos.pop_back();
    const Index neg = s.sample_negative(pos, rng);
    EXPECT_FALSE(std::binary_search(pos.begin(), pos.end(), neg));
  }
}

TEST(Sampler, FallbackScanWhenRejectionStarves) {
  // Item 2 carries almost no mass, so rejection nearly always fails and the
  // uniform fallback has to find it.
  std::vector<Index> counts{1, 1, 1000000000};
  const ReciprocalSampler s(counts);
  Rng rng(7);
  for (int t = 0; t < 20; ++t) EXPECT_EQ(s.sample_negative({0, 1}, rng), 2);
}

TEST(Sampler, SameSeedSameSequence) {
  const ReciprocalSampler s({1, 4, 2, 7, 0, 3});
  Rng a(8), b(8);
  for (int t = 0; t < 1000; ++t) EXPECT_EQ(s.sample_negative({1}, a), s.sample_negative({1}, b));
}

TEST(Sampler, BuiltFromTrainCounts) {
  InteractionStore st;
  st.num_users = 2;
  st.num_items = 4;
  st.train = {{0, 1}, {1, 3}};
  st.test = {{2}, {0}};
  const auto s = build_sampler(st);
  EXPECT_EQ(s.counts(), (std::vector<Index>{1, 2, 0, 1}));
}
