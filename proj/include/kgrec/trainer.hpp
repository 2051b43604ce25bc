#pragma once

#include "kgrec/common.hpp"
#include "kgrec/data.hpp"
#include "kgrec/embedding_io.hpp"
#include "kgrec/kmpn.hpp"
#include "kgrec/objectives.hpp"
#include "kgrec/optim.hpp"
#include "kgrec/sampler.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace kgrec {

// Fixed (non-trainable) content-side tables used as anchors by the
// cross-system loss.
struct ContentAnchors {
  Matrix user;  // N_u x h
  Matrix item;  // N_i x h

  static ContentAnchors from_files(const EmbeddingMatrixFile& users, const EmbeddingMatrixFile& items,
                                   Index num_users, Index num_items, Index hidden) {
    if (users.kind != EmbeddingKind::user) fail("content user file has kind '", kind_name(users.kind), "'");
    if (items.kind != EmbeddingKind::item) fail("content item file has kind '", kind_name(items.kind), "'");
    users.check_dim(hidden);
    items.check_dim(hidden);
    return {users.dense(num_users), items.dense(num_items)};
  }
};

struct ObjectiveResult {
  LossParts parts;  // per-triple means for bpr, l2, cs
  double total = 0.0;
  KmpnParams grad;
  Matrix basis;     // PCA basis used for the diversity term
};

// Mini-batch objective: mean BPR + lambda1 * mean(1/2 |Theta|^2) +
// lambda2 * soft-DCorr (+ lambda_cs * mean cross-system loss).
inline ObjectiveResult kmpn_objective(const KmpnParams& p, const KnowledgeGraph& g, const InteractionStore& store,
                                      std::span<const Triple> batch, const LossWeights& w, LossMode mode,
                                      const ContentAnchors* content,
                                      const std::optional<Matrix>& frozen_basis = std::nullopt,
                                      bool with_grad = true) {
  if (batch.empty()) fail("kmpn_objective: empty batch");
  if (mode == LossMode::ckmpn && !content) fail("kmpn_objective: ckmpn mode requires content embeddings");
  const Index n = static_cast<Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const Index h = p.dims.hidden;

  ForwardResult fr = forward(p, g, store, batch);
  ObjectiveResult out;
  KmpnUpstream up = KmpnUpstream::zeros(n, p.dims);

  const PairLoss bpr = bpr_loss(fr.pos_scores, fr.neg_scores);
  out.parts.bpr = bpr.value * inv_n;
  up.add_score_grads(fr, bpr.d_pos * inv_n, bpr.d_neg * inv_n);

  Matrix ua(n, h), ip(n, h), in(n, h);
  for (Index k = 0; k < n; ++k) {
    ua.row(k) = fr.user_agg(k);
    ip.row(k) = fr.item_agg(batch[k].pos);
    in.row(k) = fr.item_agg(batch[k].neg);
  }
  out.parts.l2 = (l2_reg(ua) + l2_reg(ip) + l2_reg(in)) * inv_n;
  up.d_user += (w.lambda1 * inv_n) * ua;
  up.d_pos += (w.lambda1 * inv_n) * ip;
  up.d_neg += (w.lambda1 * inv_n) * in;

  if (p.dims.n_pref >= 2) {
    const auto dc = soft_dcorr_loss(fr.trace.prefs.pref, w.epsilon, frozen_basis);
    out.parts.dcorr = dc.value;
    out.basis = dc.basis;
    up.d_pref += w.lambda2 * dc.d_pref;
  }

  if (mode == LossMode::ckmpn) {
    Matrix cu(n, h), cp(n, h), cn(n, h);
    if (content->user.cols() != h || content->item.cols() != h) {
      fail("content embeddings have dim ", content->user.cols(), ", model uses h = ", h);
    }
    for (Index k = 0; k < n; ++k) {
      cu.row(k) = content->user.row(batch[k].user);
      cp.row(k) = content->item.row(batch[k].pos);
      cn.row(k) = content->item.row(batch[k].neg);
    }
    const auto cs = cross_system_loss(ua, ip, in, cu, cp, cn);
    out.parts.cs = cs.value * inv_n;
    const double scale = w.lambda_cs * inv_n;
    up.d_user += scale * cs.d_user;
    up.d_pos += scale * cs.d_pos;
    up.d_neg += scale * cs.d_neg;
  }
  out.total = total_loss(mode, out.parts, w);
  if (with_grad) out.grad = backward(p, g, store, fr.trace, up);
  return out;
}

struct TrainConfig {
  Index epochs = 300;
  Index batch_size = 256;
  double lr_start = 1e-3;
  double lr_end = 0.0;
  AdamConfig adam;
  LossWeights weights;
  std::uint64_t seed = 0;
  bool deterministic = true;
  Index eval_every = 0;

  void validate() const {
    if (epochs < 0) fail("train config: epochs must be >= 0");
    if (batch_size < 1) fail("train config: batch size must be >= 1");
    if (!(lr_start >= lr_end && lr_end >= 0.0)) fail("train config: need lr_start >= lr_end >= 0");
    weights.validate();
  }
};

struct EpochLog {
  Index epoch = 0;
  double total = 0.0;
  double bpr = 0.0;
  double l2 = 0.0;
  double dcorr = 0.0;
  double cs = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  KmpnParams params;
  std::vector<EpochLog> log;
};

inline std::vector<std::pair<Index, Index>> train_pairs(const InteractionStore& store) {
  std::vector<std::pair<Index, Index>> pairs;
  for (Index u = 0; u < store.num_users; ++u) {
    for (Index i : store.train[u]) pairs.emplace_back(u, i);
  }
  return pairs;
}

// Shared loop for KMPN and CKMPN. The learning rate decays linearly per epoch.
// `on_epoch`, when set, is called after every epoch with the current params.
template <typename EpochHook>
TrainResult train_loop(const KnowledgeGraph& g, const InteractionStore& store, KmpnParams params,
                       const TrainConfig& cfg, LossMode mode, const ContentAnchors* content, EpochHook&& on_epoch) {
  cfg.validate();
  params.validate(g, store.num_users);
  const auto sampler = build_sampler(store);
  auto pairs = train_pairs(store);
  if (pairs.empty() && cfg.epochs > 0) fail("train: no train interactions");
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  Adam adam(cfg.adam);
  TrainResult out;
  std::vector<Triple> batch;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.lr_start, cfg.lr_end, epoch, cfg.epochs);
    rng.shuffle(pairs);
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    double sum_bpr = 0.0, sum_l2 = 0.0, sum_cs = 0.0, sum_dcorr = 0.0;
    Index batches = 0;
    for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) {
        const auto [u, i] = pairs[k];
        batch.push_back({u, i, sampler.sample_negative(store.train[u], rng)});
      }
      const auto obj = kmpn_objective(params, g, store, batch, cfg.weights, mode, content);
      const double n = static_cast<double>(batch.size());
      sum_bpr += obj.parts.bpr * n;
      sum_l2 += obj.parts.l2 * n;
      sum_cs += obj.parts.cs.value_or(0.0) * n;
      sum_dcorr += obj.parts.dcorr;
      ++batches;
      adam.step(params, obj.grad, lr);
    }
    const double np = static_cast<double>(pairs.size());
    log.bpr = sum_bpr / np;
    log.l2 = sum_l2 / np;
    log.cs = sum_cs / np;
    log.dcorr = sum_dcorr / static_cast<double>(batches);
    LossParts parts{log.bpr, log.l2, log.dcorr, std::nullopt};
    if (mode == LossMode::ckmpn) parts.cs = log.cs;
    log.total = total_loss(mode, parts, cfg.weights);
    if (!std::isfinite(log.total)) fail("train: non-finite loss at epoch ", log.epoch);
    out.log.push_back(log);
    on_epoch(log, params);
  }
  out.params = std::move(params);
  return out;
}

inline TrainResult train_kmpn(const KnowledgeGraph& g, const InteractionStore& store, KmpnParams params,
                              const TrainConfig& cfg) {
  return train_loop(g, store, std::move(params), cfg, LossMode::kmpn, nullptr,
                    [](const EpochLog&, const KmpnParams&) {});
}

inline TrainResult train_ckmpn(const KnowledgeGraph& g, const InteractionStore& store, KmpnParams params,
                               const ContentAnchors& content, const TrainConfig& cfg) {
  if (content.user.rows() != store.num_users || content.item.rows() != store.num_items) {
    fail("train_ckmpn: content tables cover ", content.user.rows(), " users / ", content.item.rows(),
         " items, dataset has ", store.num_users, " / ", store.num_items);
  }
  if (content.user.cols() != params.dims.hidden || content.item.cols() != params.dims.hidden) {
    fail("train_ckmpn: content dim ", content.user.cols(), " does not match h = ", params.dims.hidden);
  }
  return train_loop(g, store, std::move(params), cfg, LossMode::ckmpn, &content,
                    [](const EpochLog&, const KmpnParams&) {});
}

inline std::string format_log_line(const EpochLog& l) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                static_cast<long long>(l.epoch), l.total, l.bpr, l.l2, l.dcorr, l.cs, l.lr);
  return buf;
}

inline void write_loss_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path.string());
  for (const auto& l : log) out << format_log_line(l);
}

// Header line `KMPN1 N_v N_r2 N_u h L N_m N_p`, then every tensor as
// row-major little-endian float64.
inline void save_checkpoint(const KmpnParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path.string());
  out << "KMPN1 " << p.entity.rows() << ' ' << p.relation.rows() << ' ' << p.user.rows() << ' ' << p.dims.hidden
      << ' ' << p.dims.layers << ' ' << p.dims.n_meta << ' ' << p.dims.n_pref << '\n';
  p.for_each([&](std::string_view, const Matrix& m) { detail::write_tensor(out, m); });
}

inline KmpnParams load_checkpoint(const std::filesystem::path& path) {
  const std::string ps = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", ps);
  std::string header;
  if (!std::getline(in, header)) fail(ps, ": empty checkpoint");
  std::istringstream hs(header);
  std::string magic;
  Index nv = 0, nr = 0, nu = 0;
  KmpnDims d;
  if (!(hs >> magic >> nv >> nr >> nu >> d.hidden >> d.layers >> d.n_meta >> d.n_pref) || magic != "KMPN1") {
    fail(ps, ": bad checkpoint header '", header, "'");
  }
  KmpnParams::check_dims(d);
  KmpnParams p = KmpnParams::zeros(nv, nr, nu, d);
  p.for_each([&](std::string_view, Matrix& m) { detail::read_tensor(in, m, ps); });
  if (in.peek() != std::char_traits<char>::eof()) fail(ps, ": trailing bytes after checkpoint tensors");
  return p;
}

}  // namespace kgrec
