#pragma once

#include "kgrec/common.hpp"
#include "kgrec/data.hpp"
#include "kgrec/objectives.hpp"
#include "kgrec/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace kgrec {

// Desk-scale content model: items are the mean of hashed-token bucket
// embeddings, users an attention-weighted sum of their history items.
struct ContentHyper {
  Index hidden = 64;
  Index buckets = 4096;   // V_b
  Index history = 8;      // B
  Index negatives = 4;    // K
};

struct ContentParams {
  ContentHyper hyper;
  Matrix bucket;  // V_b x h
  Matrix fc1_w;   // h x h/2
  Matrix fc1_b;   // 1 x h/2
  Matrix fc2_w;   // h/2 x 1
  Matrix fc2_b;   // 1 x 1

  static void check(const ContentHyper& c) {
    if (c.hidden < 2 || c.hidden % 2 != 0) fail("content: hidden size must be even and >= 2, got ", c.hidden);
    if (c.buckets < 1) fail("content: bucket count must be >= 1");
    if (c.history < 1) fail("content: history size must be >= 1");
    if (c.negatives < 1) fail("content: negative count must be >= 1");
  }

  static ContentParams zeros(const ContentHyper& c) {
    check(c);
    ContentParams p;
    p.hyper = c;
    p.bucket = Matrix::Zero(c.buckets, c.hidden);
    p.fc1_w = Matrix::Zero(c.hidden, c.hidden / 2);
    p.fc1_b = Matrix::Zero(1, c.hidden / 2);
    p.fc2_w = Matrix::Zero(c.hidden / 2, 1);
    p.fc2_b = Matrix::Zero(1, 1);
    return p;
  }

  static ContentParams init(const ContentHyper& c, Rng& rng) {
    ContentParams p = zeros(c);
    fill_uniform(p.bucket, rng, std::sqrt(6.0 / static_cast<double>(c.hidden)));
    fill_uniform(p.fc1_w, rng, std::sqrt(6.0 / static_cast<double>(c.hidden + c.hidden / 2)));
    fill_uniform(p.fc2_w, rng, std::sqrt(6.0 / static_cast<double>(c.hidden / 2 + 1)));
    return p;
  }

  ContentParams zeros_like() const { return zeros(hyper); }

  template <typename F>
  void for_each(F&& f) {
    f(std::string_view("bucket"), bucket);
    f(std::string_view("fc1_w"), fc1_w);
    f(std::string_view("fc1_b"), fc1_b);
    f(std::string_view("fc2_w"), fc2_w);
    f(std::string_view("fc2_b"), fc2_b);
  }

  template <typename F>
  void for_each(F&& f) const {
    f(std::string_view("bucket"), bucket);
    f(std::string_view("fc1_w"), fc1_w);
    f(std::string_view("fc1_b"), fc1_b);
    f(std::string_view("fc2_w"), fc2_w);
    f(std::string_view("fc2_b"), fc2_b);
  }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Lowercased ASCII alphanumeric runs; bytes >= 0x80 stay inside tokens so
// UTF-8 words are not split.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    const bool word = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
    if (word) {
      cur.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<Index> text_buckets(std::string_view text, Index num_buckets) {
  std::vector<Index> out;
  for (const auto& tok : tokenize(text)) {
    out.push_back(static_cast<Index>(fnv1a64(tok) % static_cast<std::uint64_t>(num_buckets)));
  }
  return out;
}

struct ItemEncoding {
  RowVec embedding;
  bool empty = false;  // no tokens; embedding is zero
};

inline RowVec mean_buckets(std::span<const Index> buckets, const ContentParams& p) {
  RowVec v = RowVec::Zero(p.hyper.hidden);
  if (buckets.empty()) return v;
  for (Index b : buckets) v += p.bucket.row(b);
  return v / static_cast<double>(buckets.size());
}

inline ItemEncoding encode_item(std::string_view text, const ContentParams& p) {
  const auto buckets = text_buckets(text, p.hyper.buckets);
  return {mean_buckets(buckets, p), buckets.empty()};
}

struct UserEncoding {
  RowVec embedding;
  RowVec alpha;   // B
  Matrix hidden;  // B x h/2, tanh activations
};

// alpha = softmax(tanh(E W1 + b1) w2 + b2); user = alpha^T E.
inline UserEncoding encode_user(const Matrix& history, const ContentParams& p) {
  if (history.rows() < 1) fail("encode_user: empty history");
  if (history.cols() != p.hyper.hidden) fail("encode_user: history width ", history.cols(), " != ", p.hyper.hidden);
  UserEncoding out;
  out.hidden = ((history * p.fc1_w).rowwise() + p.fc1_b.row(0)).array().tanh().matrix();
  RowVec logits = (out.hidden * p.fc2_w).transpose();
  logits.array() += p.fc2_b(0, 0);
  const double mx = logits.maxCoeff();
  out.alpha = (logits.array() - mx).exp().matrix();
  out.alpha /= out.alpha.sum();
  out.embedding = out.alpha * history;
  return out;
}

// Bucket ids per item, computed once per corpus.
inline std::vector<std::vector<Index>> corpus_buckets(const ItemCorpus& corpus, Index num_items, Index num_buckets) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(num_items));
  for (const auto& [id, text] : corpus.texts) {
    if (id < num_items) out[id] = text_buckets(text, num_buckets);
  }
  return out;
}

struct ClickInstance {
  std::vector<Index> history;  // B items
  Index pos = 0;
  std::vector<Index> negs;     // K items
};

// Click loss of one instance and (optionally) its parameter gradient.
inline double click_instance_loss(const ClickInstance& inst, const std::vector<std::vector<Index>>& buckets,
                                  const ContentParams& p, ContentParams* grad) {
  const Index B = static_cast<Index>(inst.history.size());
  const Index K = static_cast<Index>(inst.negs.size());
  Matrix E(B, p.hyper.hidden);
  for (Index b = 0; b < B; ++b) E.row(b) = mean_buckets(buckets[inst.history[b]], p);
  const auto ue = encode_user(E, p);
  const RowVec e_pos = mean_buckets(buckets[inst.pos], p);
  Matrix e_neg(K, p.hyper.hidden);
  for (Index k = 0; k < K; ++k) e_neg.row(k) = mean_buckets(buckets[inst.negs[k]], p);
  const double y_pos = ue.embedding.dot(e_pos);
  const Vector y_neg = e_neg * ue.embedding.transpose();
  const ClickLoss loss = nrms_click_loss(y_pos, y_neg);
  if (!grad) return loss.value;

  auto scatter = [&](Index item, const RowVec& d) {
    const auto& bk = buckets[item];
    if (bk.empty()) return;
    const double inv = 1.0 / static_cast<double>(bk.size());
    for (Index b : bk) grad->bucket.row(b) += inv * d;
  };

  RowVec d_user = loss.d_pos * e_pos + loss.d_neg.transpose() * e_neg;
  scatter(inst.pos, loss.d_pos * ue.embedding);
  for (Index k = 0; k < K; ++k) scatter(inst.negs[k], loss.d_neg[k] * ue.embedding);

  Matrix dE = ue.alpha.transpose() * d_user;
  const RowVec d_alpha = (E * d_user.transpose()).transpose();
  const double inner = ue.alpha.dot(d_alpha);
  const RowVec d_logit = ue.alpha.cwiseProduct((d_alpha.array() - inner).matrix());
  grad->fc2_b(0, 0) += d_logit.sum();
  grad->fc2_w += ue.hidden.transpose() * d_logit.transpose();
  const Matrix d_hidden = d_logit.transpose() * p.fc2_w.transpose();
  const Matrix d_pre = d_hidden.cwiseProduct((1.0 - ue.hidden.array().square()).matrix());
  grad->fc1_w += E.transpose() * d_pre;
  grad->fc1_b += d_pre.colwise().sum();
  dE += d_pre * p.fc1_w.transpose();
  for (Index b = 0; b < B; ++b) scatter(inst.history[b], dE.row(b));
  return loss.value;
}

struct ContentTrainConfig {
  Index epochs = 50;
  Index batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

inline ClickInstance sample_click_instance(const ItemList& train, Index num_items, const ContentHyper& hyper,
                                           Rng& rng) {
  ClickInstance inst;
  const std::size_t pos_idx = rng.below(train.size());
  inst.pos = train[pos_idx];
  std::vector<Index> rest;
  for (std::size_t k = 0; k < train.size(); ++k) {
    if (k != pos_idx) rest.push_back(train[k]);
  }
  if (rest.empty()) rest.push_back(inst.pos);
  rng.shuffle(rest);
  rest.resize(std::min<std::size_t>(rest.size(), static_cast<std::size_t>(hyper.history)));
  inst.history = std::move(rest);
  if (static_cast<Index>(train.size()) >= num_items) fail("content: user positives cover the whole catalog");
  while (static_cast<Index>(inst.negs.size()) < hyper.negatives) {
    const Index cand = static_cast<Index>(rng.below(static_cast<std::uint64_t>(num_items)));
    if (!std::binary_search(train.begin(), train.end(), cand)) inst.negs.push_back(cand);
  }
  return inst;
}

struct ContentTrainResult {
  ContentParams params;
  std::vector<double> epoch_loss;  // mean click loss per instance
};

// Adam on the click loss; one instance per train user per epoch.
inline ContentTrainResult train_content(const ItemCorpus& corpus, const InteractionStore& store,
                                        ContentParams params, const ContentTrainConfig& cfg) {
  if (corpus.texts.empty()) fail("train_content: empty corpus");
  if (cfg.epochs < 0) fail("train_content: negative epoch count");
  if (cfg.batch_size < 1) fail("train_content: batch size must be >= 1");
  const auto buckets = corpus_buckets(corpus, store.num_items, params.hyper.buckets);
  std::vector<Index> users;
  for (Index u = 0; u < store.num_users; ++u) {
    if (!store.train[u].empty()) users.push_back(u);
  }
  Rng rng(cfg.seed);
  Adam adam;
  ContentTrainResult out;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(users);
    double total = 0.0;
    for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(users.size(), start + static_cast<std::size_t>(cfg.batch_size));
      ContentParams grad = params.zeros_like();
      for (std::size_t k = start; k < end; ++k) {
        const auto inst = sample_click_instance(store.train[users[k]], store.num_items, params.hyper, rng);
        total += click_instance_loss(inst, buckets, params, &grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.for_each([&](std::string_view, Matrix& m) { m *= scale; });
      adam.step(params, grad, cfg.lr);
    }
    out.epoch_loss.push_back(users.empty() ? 0.0 : total / static_cast<double>(users.size()));
  }
  out.params = std::move(params);
  return out;
}

// Item embeddings for ids [0, num_items).
inline Matrix content_item_embeddings(const ItemCorpus& corpus, Index num_items, const ContentParams& p) {
  Matrix out(num_items, p.hyper.hidden);
  for (Index i = 0; i < num_items; ++i) out.row(i) = encode_item(corpus.text(i), p).embedding;
  return out;
}

// User embedding over a full history: encode chunks of B items in order and
// mean-pool the chunk outputs.
inline RowVec content_user_embedding(const ItemList& history, const Matrix& item_embs, const ContentParams& p) {
  if (history.empty()) return RowVec::Zero(p.hyper.hidden);
  const auto B = static_cast<std::size_t>(p.hyper.history);
  RowVec acc = RowVec::Zero(p.hyper.hidden);
  Index chunks = 0;
  for (std::size_t start = 0; start < history.size(); start += B) {
    const std::size_t end = std::min(history.size(), start + B);
    Matrix E(static_cast<Index>(end - start), p.hyper.hidden);
    for (std::size_t k = start; k < end; ++k) E.row(static_cast<Index>(k - start)) = item_embs.row(history[k]);
    acc += encode_user(E, p).embedding;
    ++chunks;
  }
  return acc / static_cast<double>(chunks);
}

// Users are encoded from train history, falling back to cold-start history.
inline Matrix content_user_embeddings(const InteractionStore& store, const Matrix& item_embs, const ContentParams& p) {
  Matrix out(store.num_users, p.hyper.hidden);
  for (Index u = 0; u < store.num_users; ++u) {
    const ItemList& hist = !store.train[u].empty() ? store.train[u] : store.cold_history[u];
    out.row(u) = content_user_embedding(hist, item_embs, p);
  }
  return out;
}

}  // namespace kgrec
