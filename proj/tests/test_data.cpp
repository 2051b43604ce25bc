#include "support.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace testing_support;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Interactions, ParsesUserLines) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1 2\n1 2\n");
  const auto s = load_interactions(dir.path());
  EXPECT_EQ(s.num_users, 2);
  EXPECT_EQ(s.num_items, 3);
  EXPECT_EQ(s.train[0], (ItemList{1, 2}));
  EXPECT_EQ(s.train[1], (ItemList{2}));
  EXPECT_FALSE(s.has_test);
}

TEST(Interactions, CollapsesDuplicatesAndCountsThem) {
  TempDir dir;
  write_text(dir / "train.txt", "0 3 3\n");
  const auto s = load_interactions(dir.path());
  EXPECT_EQ(s.train[0], (ItemList{3}));
  EXPECT_EQ(s.duplicates_collapsed, 1);
}

TEST(Interactions, AcceptsTabsAndTrailingWhitespace) {
  TempDir dir;
  write_text(dir / "train.txt", "0\t4 1  \n1 0\t\r\n\n");
  const auto s = load_interactions(dir.path());
  EXPECT_EQ(s.train[0], (ItemList{1, 4}));
  EXPECT_EQ(s.train[1], (ItemList{0}));
}

TEST(Interactions, OverlapNamesUserAndItem) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1\n1 2\n2 5 6\n");
  write_text(dir / "test.txt", "2 5\n");
  const std::string msg = error_of([&] { load_interactions(dir.path()); });
  EXPECT_NE(msg.find("user 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("item 5"), std::string::npos) << msg;
  EXPECT_NE(msg.find("test.txt"), std::string::npos) << msg;
}

TEST(Interactions, MalformedLineReportsLineNumber) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1\n1 x 2\n");
  const std::string msg = error_of([&] { load_interactions(dir.path()); });
  EXPECT_NE(msg.find("train.txt:2"), std::string::npos) << msg;
}

TEST(Interactions, NegativeIdIsMalformed) {
  TempDir dir;
  write_text(dir / "train.txt", "0 -1\n");
  EXPECT_THROW(load_interactions(dir.path()), Error);
}

TEST(Interactions, RejectsNonDenseUsers) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1\n2 1\n");
  const std::string msg = error_of([&] { load_interactions(dir.path()); });
  EXPECT_NE(msg.find("user 1"), std::string::npos) << msg;
}

TEST(Interactions, RejectsRepeatedUserLine) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1\n0 2\n");
  EXPECT_THROW(load_interactions(dir.path()), Error);
}

TEST(Interactions, ColdUserMustNotTrain) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1\n1 2\n");
  write_text(dir / "cold_history.txt", "1 0\n");
  write_text(dir / "cold_test.txt", "1 3\n");
  EXPECT_THROW(load_interactions(dir.path()), Error);
}

TEST(Interactions, ColdFilesComeTogether) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1\n");
  write_text(dir / "cold_history.txt", "1 0\n");
  EXPECT_THROW(load_interactions(dir.path()), Error);
}

TEST(Interactions, MissingTrainFileNamesPath) {
  TempDir dir;
  const std::string msg = error_of([&] { load_interactions(dir.path()); });
  EXPECT_NE(msg.find("train.txt"), std::string::npos);
}

TEST(Interactions, RoundTripIsStructuralAndByteStable) {
  const auto syn = make_synthetic_dataset(SyntheticSpec{}, 11);
  TempDir a, b;
  write_interactions(syn.data.store, a.path());
  const auto loaded = load_interactions(a.path(), syn.data.store.num_items, syn.data.store.num_users);
  EXPECT_TRUE(loaded == syn.data.store);
  write_interactions(loaded, b.path());
  for (const char* f : {"train.txt", "valid.txt", "test.txt", "cold_history.txt", "cold_test.txt"}) {
    EXPECT_EQ(read_bytes(a / f), read_bytes(b / f)) << f;
  }
}

TEST(KnowledgeGraphTest, SingleTripletGetsInverse) {
  const KnowledgeGraph g(2, 1, {{0, 0, 1}});
  ASSERT_EQ(g.num_edges(), 2);
  EXPECT_EQ(g.num_relations(), 2);
  ASSERT_EQ(g.degree(0), 1);
  EXPECT_EQ(g.neighbors(0)[0], (Edge{0, 1}));
  ASSERT_EQ(g.degree(1), 1);
  EXPECT_EQ(g.neighbors(1)[0], (Edge{1, 0}));
}

TEST(KnowledgeGraphTest, EmptyFileGivesEmptyGraph) {
  TempDir dir;
  write_text(dir / "kg.txt", "");
  const auto g = load_kg(dir / "kg.txt", 2, 5);
  EXPECT_EQ(g.num_edges(), 0);
  EXPECT_EQ(g.num_entities(), 5);
}

TEST(KnowledgeGraphTest, RelationOutOfRange) {
  TempDir dir;
  write_text(dir / "kg.txt", "0 5 1\n");
  const std::string msg = error_of([&] { load_kg(dir / "kg.txt", 3); });
  EXPECT_NE(msg.find("relation 5 >= 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("kg.txt:1"), std::string::npos) << msg;
}

TEST(KnowledgeGraphTest, EntityBeyondDeclaredCount) {
  TempDir dir;
  write_text(dir / "kg.txt", "0 0 1\n0 0 9\n");
  const std::string msg = error_of([&] { load_kg(dir / "kg.txt", 1, 5); });
  EXPECT_NE(msg.find("kg.txt:2"), std::string::npos) << msg;
}

TEST(KnowledgeGraphTest, InverseClosureAndSortedAdjacency) {
  Rng rng(3);
  const auto trip = random_triplets(30, 4, 120, rng);
  const KnowledgeGraph g(30, 4, trip);
  std::multiset<std::array<Index, 3>> edges;
  for (Index h = 0; h < g.num_entities(); ++h) {
    const auto nb = g.neighbors(h);
    EXPECT_TRUE(std::is_sorted(nb.begin(), nb.end()));
    for (const auto& e : nb) edges.insert({h, e.relation, e.tail});
  }
  for (const auto& [h, r, t] : edges) {
    if (r < 4) {
      EXPECT_EQ(edges.count({h, r, t}), edges.count({t, r + 4, h}));
    }
  }
  EXPECT_EQ(g.num_triplets(), 120);
}

TEST(KnowledgeGraphTest, RoundTripIsByteStable) {
  Rng rng(5);
  const KnowledgeGraph g(20, 3, random_triplets(20, 3, 50, rng));
  TempDir dir;
  write_kg(g, dir / "a.txt");
  const auto loaded = load_kg(dir / "a.txt", 3, 20);
  EXPECT_TRUE(loaded == g);
  write_kg(loaded, dir / "b.txt");
  EXPECT_EQ(read_bytes(dir / "a.txt"), read_bytes(dir / "b.txt"));
}

TEST(Corpus, ParsesTabSeparatedTexts) {
  TempDir dir;
  write_text(dir / "items.tsv", "0\tHello world\n2\t\n1\tcaf\xc3\xa9 au lait\n");
  const auto c = load_corpus(dir / "items.tsv", 3);
  EXPECT_EQ(c.text(0), "Hello world");
  EXPECT_EQ(c.text(2), "");
  EXPECT_EQ(c.empty_texts, 1);
  EXPECT_EQ(c.text(1), "caf\xc3\xa9 au lait");
}

TEST(Corpus, RejectsDuplicateAndOutOfRange) {
  TempDir dir;
  write_text(dir / "a.tsv", "0\tx\n0\ty\n");
  EXPECT_THROW(load_corpus(dir / "a.tsv", 3), Error);
  write_text(dir / "b.tsv", "7\tx\n");
  EXPECT_THROW(load_corpus(dir / "b.tsv", 3), Error);
}

TEST(DatasetDir, MissingKgNamesPath) {
  TempDir dir;
  write_text(dir / "train.txt", "0 1\n");
  const std::string msg = error_of([&] { load_dataset(dir.path()); });
  EXPECT_NE(msg.find((dir / "kg.txt").string()), std::string::npos) << msg;
}

TEST(DatasetDir, MissingDirectory) {
  EXPECT_THROW(load_dataset("/nonexistent/kgrec/data"), Error);
}

TEST(DatasetDir, ItemsWithoutKgEdgesStillMapToEntities) {
  TempDir dir;
  write_text(dir / "train.txt", "0 4\n");
  write_text(dir / "kg.txt", "0 0 1\n");
  const auto ds = load_dataset(dir.path());
  EXPECT_EQ(ds.graph.num_entities(), 5);
}

TEST(DatasetDir, WriteThenLoadMatches) {
  const auto syn = make_synthetic_dataset(SyntheticSpec{}, 2);
  TempDir dir;
  write_dataset(syn.data, dir.path());
  const auto ds = load_dataset(dir.path());
  EXPECT_TRUE(ds.store == syn.data.store);
  EXPECT_TRUE(ds.graph == syn.data.graph);
  EXPECT_EQ(ds.corpus.texts, syn.data.corpus.texts);
}

TEST(Synthetic, TrainDensityMatchesSpec) {
  const auto syn = make_synthetic_dataset(SyntheticSpec{}, 7);
  const auto& s = syn.data.store;
  double total = 0.0;
  Index users = 0;
  for (Index u = 0; u < s.num_users; ++u) {
    if (!s.train[u].empty()) {
      total += static_cast<double>(s.train[u].size());
      ++users;
    }
  }
  const double mean = total / static_cast<double>(users);
  EXPECT_GE(mean, 7.0);
  EXPECT_LE(mean, 8.0);
}

TEST(Synthetic, SameSeedSameBytes) {
  TempDir a, b;
  write_dataset(make_synthetic_dataset(SyntheticSpec{}, 9).data, a.path());
  write_dataset(make_synthetic_dataset(SyntheticSpec{}, 9).data, b.path());
  for (const char* f : {"train.txt", "valid.txt", "test.txt", "cold_history.txt", "cold_test.txt", "kg.txt",
                        "items.tsv", "dataset.meta"}) {
    EXPECT_EQ(read_bytes(a / f), read_bytes(b / f)) << f;
  }
}

TEST(Synthetic, RejectsInfeasibleSpecs) {
  SyntheticSpec s;
  s.density = 1.5;
  EXPECT_THROW(make_synthetic_dataset(s, 1), Error);
  s = SyntheticSpec{};
  s.num_clusters = 400;
  EXPECT_THROW(make_synthetic_dataset(s, 1), Error);
}

TEST(Synthetic, UsersMostlyStayInTheirCluster) {
  const auto syn = make_synthetic_dataset(SyntheticSpec{}, 7);
  const auto& s = syn.data.store;
  Index inside = 0, all = 0;
  for (Index u = 0; u < s.num_users; ++u) {
    for (Index i : s.train[u]) {
      inside += syn.item_cluster[i] == syn.user_cluster[u];
      ++all;
    }
  }
  EXPECT_GT(static_cast<double>(inside) / static_cast<double>(all), 0.85);
}

TEST(Synthetic, ClustersHaveDistinctAttributeEntities) {
  const auto syn = make_synthetic_dataset(SyntheticSpec{}, 7);
  const auto& g = syn.data.graph;
  std::map<Index, std::set<Index>> attr_clusters;
  for (Index i = 0; i < syn.data.store.num_items; ++i) {
    for (const auto& e : g.neighbors(i)) {
      if (e.relation == 0) attr_clusters[e.tail].insert(syn.item_cluster[i]);
    }
  }
  ASSERT_FALSE(attr_clusters.empty());
  for (const auto& [entity, clusters] : attr_clusters) EXPECT_EQ(clusters.size(), 1u) << entity;
}

TEST(Synthetic, ColdCarveOutIsThreePercent) {
  const auto syn = make_synthetic_dataset(SyntheticSpec{}, 7);
  const auto& s = syn.data.store;
  ASSERT_TRUE(s.has_cold_start);
  Index cold = 0;
  for (Index u = 0; u < s.num_users; ++u) {
    if (s.is_cold_user(u)) {
      ++cold;
      EXPECT_TRUE(s.train[u].empty());
      EXPECT_FALSE(s.cold_history[u].empty());
      EXPECT_FALSE(s.cold_test[u].empty());
    }
  }
  EXPECT_EQ(cold, 6);
}
