#include "support.hpp"

#include <gtest/gtest.h>

using namespace testing_support;

namespace {

struct Quad {
  Matrix w;
  template <typename F>
  void for_each(F&& f) {
    f("w", w);
  }
  template <typename F>
  void for_each(F&& f) const {
    f("w", w);
  }
};

struct Small {
  SyntheticDataset syn;
  KmpnParams init;
  ContentAnchors anchors;
};

Small small_world(std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.num_users = 40;
  spec.num_items = 60;
  spec.num_clusters = 3;
  spec.attributes_per_cluster = 3;
  spec.density = 0.2;
  Small s{make_synthetic_dataset(spec, seed), {}, {}};
  const auto& d = s.syn.data;
  KmpnDims dims{8, 2, 4, 4};
  Rng rng(seed);
  s.init = KmpnParams::init(d.graph.num_entities(), d.graph.num_relations(), d.store.num_users, dims, rng);
  s.anchors.user = random_matrix(d.store.num_users, 8, rng, 0.5);
  s.anchors.item = random_matrix(d.store.num_items, 8, rng, 0.5);
  return s;
}

TrainConfig quick(Index epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.lr_start = 1e-2;
  cfg.seed = 11;
  return cfg;
}

std::string log_text(const std::vector<EpochLog>& log, bool with_cs) {
  std::string out;
  for (auto l : log) {
    if (!with_cs) l.cs = 0.0;
    out += format_log_line(l);
  }
  return out;
}

}  // namespace

TEST(LrSchedule, Endpoints) {
  EXPECT_DOUBLE_EQ(lr_at(1e-3, 0.0, 0, 10), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(1e-3, 0.0, 10, 10), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(1e-3, 1e-4, 5, 10), 5.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(0.2, 0.2, 3, 7), 0.2);
}

TEST(LrSchedule, MonotoneNonIncreasing) {
  double prev = lr_at(1e-2, 1e-3, 0, 97);
  for (Index s = 1; s <= 97; ++s) {
    const double cur = lr_at(1e-2, 1e-3, s, 97);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
}

TEST(LrSchedule, RejectsBadArguments) {
  EXPECT_THROW(lr_at(1e-3, 0.0, 0, 0), Error);
  EXPECT_THROW(lr_at(1e-3, 0.0, 11, 10), Error);
  EXPECT_THROW(lr_at(1e-3, 0.0, -1, 10), Error);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Quad p{Matrix(1, 3)}, g{Matrix(1, 3)};
  p.w << 1.0, 2.0, 3.0;
  g.w << 0.5, -4.0, 1e-3;
  Adam adam;
  adam.step(p, g, 0.1);
  EXPECT_NEAR(p.w(0, 0), 0.9, 1e-6);
  EXPECT_NEAR(p.w(0, 1), 2.1, 1e-6);
  EXPECT_NEAR(p.w(0, 2), 2.9, 1e-4);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(AdamTest, ZeroGradientLeavesParams) {
  Quad p{Matrix::Constant(2, 2, 1.5)}, g{Matrix::Zero(2, 2)};
  Adam adam;
  adam.step(p, g, 0.1);
  adam.step(p, g, 0.1);
  EXPECT_EQ(p.w, Matrix::Constant(2, 2, 1.5));
  EXPECT_EQ(adam.steps(), 2);
}

TEST(AdamTest, DescendsQuadraticBowl) {
  Quad p{Matrix::Constant(1, 4, 3.0)}, g{Matrix(1, 4)};
  Adam adam;
  double prev = p.w.squaredNorm();
  for (int t = 0; t < 500; ++t) {
    g.w = 2.0 * p.w;
    adam.step(p, g, 0.05);
  }
  EXPECT_LT(p.w.squaredNorm(), 1e-2 * prev);
}

TEST(AdamTest, NonFiniteGradientNamesTensor) {
  Quad p{Matrix::Zero(1, 2)}, g{Matrix::Zero(1, 2)};
  g.w(0, 1) = std::numeric_limits<double>::quiet_NaN();
  Adam adam;
  try {
    adam.step(p, g, 0.1);
    FAIL() << "expected throw";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite gradient in w"), std::string::npos) << e.what();
  }
  EXPECT_EQ(adam.steps(), 0);
}

TEST(AdamTest, ShapeMismatchThrows) {
  Quad p{Matrix::Zero(1, 2)}, g{Matrix::Zero(2, 1)};
  Adam adam;
  EXPECT_THROW(adam.step(p, g, 0.1), Error);
}

TEST(Training, ZeroEpochsReturnsInit) {
  const auto s = small_world();
  const auto res = train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, quick(0));
  EXPECT_TRUE(res.log.empty());
  EXPECT_EQ(res.params.entity, s.init.entity);
  EXPECT_EQ(res.params.pref_logits, s.init.pref_logits);
}

TEST(Training, SameSeedIsBitIdentical) {
  const auto s = small_world();
  const auto a = train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, quick(4));
  const auto b = train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, quick(4));
  EXPECT_EQ(log_text(a.log, true), log_text(b.log, true));
  EXPECT_EQ(a.params.entity, b.params.entity);
  EXPECT_EQ(a.params.user, b.params.user);
}

TEST(Training, DifferentSeedDiffers) {
  const auto s = small_world();
  auto cfg = quick(2);
  const auto a = train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, cfg);
  cfg.seed = 12;
  const auto b = train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, cfg);
  EXPECT_NE(a.params.entity, b.params.entity);
}

TEST(Training, ZeroCrossSystemWeightMatchesKmpn) {
  const auto s = small_world();
  auto cfg = quick(5);
  cfg.weights.lambda_cs = 0.0;
  const auto k = train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, cfg);
  const auto c = train_ckmpn(s.syn.data.graph, s.syn.data.store, s.init, s.anchors, cfg);
  EXPECT_EQ(log_text(k.log, false), log_text(c.log, false));
  EXPECT_EQ(k.params.entity, c.params.entity);
  EXPECT_GT(c.log.front().cs, 0.0);
}

TEST(Training, CrossSystemLossDecreases) {
  const auto s = small_world();
  auto cfg = quick(15);
  cfg.weights.lambda_cs = 1.0;
  const auto c = train_ckmpn(s.syn.data.graph, s.syn.data.store, s.init, s.anchors, cfg);
  EXPECT_LT(c.log.back().cs, c.log.front().cs);
  for (const auto& l : c.log) EXPECT_TRUE(std::isfinite(l.total));
}

TEST(Training, BprDecreasesAndLrDecays) {
  const auto s = small_world();
  const auto r = train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, quick(10));
  ASSERT_EQ(r.log.size(), 10u);
  EXPECT_LT(r.log.back().bpr, r.log.front().bpr);
  EXPECT_DOUBLE_EQ(r.log.front().lr, 1e-2);
  EXPECT_LT(r.log.back().lr, r.log.front().lr);
  EXPECT_EQ(r.log.back().epoch, 10);
}

TEST(Training, ContentCoverageAndDimChecked) {
  const auto s = small_world();
  auto short_anchors = s.anchors;
  short_anchors.item = short_anchors.item.topRows(10).eval();
  EXPECT_THROW(train_ckmpn(s.syn.data.graph, s.syn.data.store, s.init, short_anchors, quick(1)), Error);
  auto wide = s.anchors;
  wide.user = Matrix::Zero(s.anchors.user.rows(), 16);
  wide.item = Matrix::Zero(s.anchors.item.rows(), 16);
  EXPECT_THROW(train_ckmpn(s.syn.data.graph, s.syn.data.store, s.init, wide, quick(1)), Error);
}

TEST(Training, InvalidConfigRejected) {
  const auto s = small_world();
  auto cfg = quick(1);
  cfg.batch_size = 0;
  EXPECT_THROW(train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, cfg), Error);
  cfg = quick(1);
  cfg.lr_end = 1.0;
  EXPECT_THROW(train_kmpn(s.syn.data.graph, s.syn.data.store, s.init, cfg), Error);
}

TEST(Training, AnchorsFromFilesCheckDims) {
  const auto users = EmbeddingMatrixFile::from_table(EmbeddingKind::user, Matrix::Zero(3, 16));
  const auto items = EmbeddingMatrixFile::from_table(EmbeddingKind::item, Matrix::Zero(4, 16));
  try {
    ContentAnchors::from_files(users, items, 3, 4, 8);
    FAIL() << "expected throw";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("8"), std::string::npos) << msg;
  }
  EXPECT_THROW(ContentAnchors::from_files(items, items, 3, 4, 16), Error);
  EXPECT_NO_THROW(ContentAnchors::from_files(users, items, 3, 4, 16));
}

TEST(LossLog, LineFormat) {
  EpochLog l{3, 1.5, 0.5, 0.25, 0.125, 0.0, 1e-3};
  EXPECT_EQ(format_log_line(l), "3\t1.5\t0.5\t0.25\t0.125\t0\t0.001\n");
}

TEST(LossLog, WrittenFileMatchesLines) {
  std::vector<EpochLog> log{{1, 2.0, 1.0, 0.5, 0.0, 0.0, 0.01}, {2, 1.0, 0.5, 0.25, 0.0, 0.0, 0.005}};
  TempDir dir;
  write_loss_log(log, dir / "loss.log");
  EXPECT_EQ(read_bytes(dir / "loss.log"), format_log_line(log[0]) + format_log_line(log[1]));
}
