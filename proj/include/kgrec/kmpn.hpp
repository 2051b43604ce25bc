#pragma once

#include "kgrec/common.hpp"
#include "kgrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

namespace kgrec {

struct KmpnDims {
  Index hidden = 64;
  Index layers = 3;
  Index n_meta = 64;
  Index n_pref = 8;
};

// Every trainable tensor of the CF model. Gradients reuse the same type.
struct KmpnParams {
  KmpnDims dims;
  Matrix entity;       // N_v x h, layer-0 entity embeddings
  Matrix relation;     // 2 N_r x h
  Matrix user;         // N_u x h, attention query per user
  Matrix meta;         // N_m x h
  Matrix pref_logits;  // N_p x N_m

  static KmpnParams zeros(Index num_entities, Index num_relations, Index num_users, const KmpnDims& d) {
    KmpnParams p;
    p.dims = d;
    p.entity = Matrix::Zero(num_entities, d.hidden);
    p.relation = Matrix::Zero(num_relations, d.hidden);
    p.user = Matrix::Zero(num_users, d.hidden);
    p.meta = Matrix::Zero(d.n_meta, d.hidden);
    p.pref_logits = Matrix::Zero(d.n_pref, d.n_meta);
    return p;
  }

  // Embeddings ~ U[-sqrt(6/h), sqrt(6/h)], preference logits ~ U[-0.1, 0.1].
  static KmpnParams init(Index num_entities, Index num_relations, Index num_users, const KmpnDims& d,
                         Rng& rng) {
    check_dims(d);
    KmpnParams p = zeros(num_entities, num_relations, num_users, d);
    const double bound = std::sqrt(6.0 / static_cast<double>(d.hidden));
    fill_uniform(p.entity, rng, bound);
    fill_uniform(p.relation, rng, bound);
    fill_uniform(p.user, rng, bound);
    fill_uniform(p.meta, rng, bound);
    fill_uniform(p.pref_logits, rng, 0.1);
    return p;
  }

  static void check_dims(const KmpnDims& d) {
    if (d.hidden < 1) fail("kmpn: hidden size must be >= 1");
    if (d.layers < 0) fail("kmpn: layer count must be >= 0");
    if (d.n_meta < 1) fail("kmpn: need at least one meta-preference");
    if (d.n_pref < 1) fail("kmpn: need at least one preference");
  }

  KmpnParams zeros_like() const {
    return zeros(entity.rows(), relation.rows(), user.rows(), dims);
  }

  template <typename F>
  void for_each(F&& f) {
    f(std::string_view("entity"), entity);
    f(std::string_view("relation"), relation);
    f(std::string_view("user"), user);
    f(std::string_view("meta"), meta);
    f(std::string_view("pref_logits"), pref_logits);
  }

  template <typename F>
  void for_each(F&& f) const {
    f(std::string_view("entity"), entity);
    f(std::string_view("relation"), relation);
    f(std::string_view("user"), user);
    f(std::string_view("meta"), meta);
    f(std::string_view("pref_logits"), pref_logits);
  }

  void validate(const KnowledgeGraph& g, Index num_users) const {
    check_dims(dims);
    const Index h = dims.hidden;
    if (entity.rows() != g.num_entities() || entity.cols() != h) fail("kmpn: entity table shape mismatch");
    if (relation.rows() != g.num_relations() || relation.cols() != h) fail("kmpn: relation table shape mismatch");
    if (user.rows() != num_users || user.cols() != h) fail("kmpn: user table shape mismatch");
    if (meta.rows() != dims.n_meta || meta.cols() != h) fail("kmpn: meta-preference table shape mismatch");
    if (pref_logits.rows() != dims.n_pref || pref_logits.cols() != dims.n_meta) {
      fail("kmpn: preference logits shape mismatch");
    }
    for_each([](std::string_view name, const Matrix& m) {
      if (!m.allFinite()) fail("kmpn: non-finite values in ", name);
    });
  }
};

struct Triple {
  Index user;
  Index pos;
  Index neg;
  bool operator==(const Triple&) const = default;
};

inline double gate(const RowVec& head, const RowVec& relation) { return sigmoid(head.dot(relation)); }

inline double score(const RowVec& user_agg, const RowVec& item_agg) { return user_agg.dot(item_agg); }

// One gated path convolution. Each node averages gate * (e_rel ⊙ prev_tail)
// over its out-edges; the gate reads the node's own layer input. Nodes
// without edges output zeros. `gates_out`, when given, receives one gate per
// edge in adjacency order.
inline Matrix conv_layer(const Matrix& prev, const KnowledgeGraph& graph, const Matrix& relation,
                         std::vector<double>* gates_out = nullptr) {
  Matrix out = Matrix::Zero(prev.rows(), prev.cols());
  if (gates_out) gates_out->assign(static_cast<std::size_t>(graph.num_edges()), 0.0);
  for (Index i = 0; i < graph.num_entities(); ++i) {
    const Index deg = graph.degree(i);
    if (deg == 0) continue;
    auto acc = out.row(i);
    for (Index e = graph.edge_begin(i); e < graph.edge_end(i); ++e) {
      const Edge& edge = graph.edge(e);
      const double g = sigmoid(prev.row(i).dot(relation.row(edge.relation)));
      if (gates_out) (*gates_out)[e] = g;
      acc += g * relation.row(edge.relation).cwiseProduct(prev.row(edge.tail));
    }
    acc /= static_cast<double>(deg);
  }
  return out;
}

inline Matrix aggregate_layers(std::span<const Matrix> layers) {
  if (layers.empty()) fail("aggregate_layers: empty layer list");
  Matrix sum = layers.front();
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (layers[l].rows() != sum.rows() || layers[l].cols() != sum.cols()) {
      fail("aggregate_layers: layer ", l, " is ", layers[l].rows(), "x", layers[l].cols(), ", expected ",
           sum.rows(), "x", sum.cols());
    }
    sum += layers[l];
  }
  return sum;
}

inline void softmax_inplace(Eigen::Ref<RowVec> v) {
  const double mx = v.maxCoeff();
  v = (v.array() - mx).exp();
  v /= v.sum();
}

struct PreferenceEmbeddings {
  Matrix beta;  // N_p x N_m, rows sum to one
  Matrix pref;  // N_p x h
};

inline PreferenceEmbeddings preference_embeddings(const KmpnParams& p) {
  PreferenceEmbeddings out;
  out.beta = p.pref_logits;
  for (Index r = 0; r < out.beta.rows(); ++r) softmax_inplace(out.beta.row(r));
  out.pref = out.beta * p.meta;
  return out;
}

struct EntityPropagation {
  std::vector<Matrix> layers;              // e^(0..L)
  std::vector<Matrix> aggregated;          // prefix sums of layers
  std::vector<std::vector<double>> gates;  // per conv layer, per edge
  const Matrix& final() const { return aggregated.back(); }
};

inline EntityPropagation propagate_entities(const KmpnParams& p, const KnowledgeGraph& g) {
  EntityPropagation out;
  out.layers.reserve(p.dims.layers + 1);
  out.layers.push_back(p.entity);
  out.aggregated.push_back(p.entity);
  out.gates.resize(static_cast<std::size_t>(p.dims.layers));
  for (Index l = 0; l < p.dims.layers; ++l) {
    out.layers.push_back(conv_layer(out.layers.back(), g, p.relation, &out.gates[l]));
    out.aggregated.push_back(out.aggregated.back() + out.layers.back());
  }
  return out;
}

struct UserForward {
  std::vector<Index> users;
  Matrix alpha;                   // n x N_p
  Matrix mixed_pref;              // n x h, sum_p alpha_p e_p
  std::vector<Matrix> per_layer;  // L+1 of n x h
  Matrix aggregated;              // n x h
  Matrix history_mean;            // n x h, mean of aggregated item embeddings
};

inline RowVec history_mean(const Matrix& table, std::span<const Index> items) {
  RowVec m = RowVec::Zero(table.cols());
  for (Index i : items) m += table.row(i);
  return m / static_cast<double>(items.size());
}

// Users are profiled as mean_i(e_i^(l)) ⊙ sum_p alpha_p e_p, with alpha a
// softmax over e_p · e_u. The mean over train items replaces the bare sum.
inline UserForward user_forward(std::span<const Matrix> entity_layers, const PreferenceEmbeddings& prefs,
                                const KmpnParams& p, const InteractionStore& store,
                                std::span<const Index> users) {
  const Index n = static_cast<Index>(users.size());
  const Index h = p.dims.hidden;
  UserForward out;
  out.users.assign(users.begin(), users.end());
  out.alpha.resize(n, p.dims.n_pref);
  out.mixed_pref.resize(n, h);
  out.per_layer.assign(entity_layers.size(), Matrix(n, h));
  out.aggregated = Matrix::Zero(n, h);
  out.history_mean = Matrix::Zero(n, h);
  for (Index k = 0; k < n; ++k) {
    const Index u = users[k];
    const auto& hist = store.train[u];
    if (hist.empty()) fail("user ", u, " has an empty train history");
    RowVec logits = (prefs.pref * p.user.row(u).transpose()).transpose();
    softmax_inplace(logits);
    out.alpha.row(k) = logits;
    out.mixed_pref.row(k) = logits * prefs.pref;
    for (std::size_t l = 0; l < entity_layers.size(); ++l) {
      const RowVec mean_l = history_mean(entity_layers[l], hist);
      out.history_mean.row(k) += mean_l;
      out.per_layer[l].row(k) = mean_l.cwiseProduct(out.mixed_pref.row(k));
      out.aggregated.row(k) += out.per_layer[l].row(k);
    }
  }
  return out;
}

// Uniform attention over preferences; used for users without a trained query.
inline RowVec cold_start_user(std::span<const Index> history, std::span<const Matrix> entity_layers,
                              const PreferenceEmbeddings& prefs) {
  if (history.empty()) fail("cold_start_user: empty history");
  const RowVec mixed = prefs.pref.colwise().mean();
  RowVec agg = RowVec::Zero(prefs.pref.cols());
  for (const auto& layer : entity_layers) agg += history_mean(layer, history).cwiseProduct(mixed);
  return agg;
}

// All user aggregates with trained attention. Users without train items
// (cold-start or empty) get a zero row.
inline Matrix all_user_embeddings(const EntityPropagation& ent, const PreferenceEmbeddings& prefs,
                                  const KmpnParams& p, const InteractionStore& store) {
  std::vector<Index> users;
  for (Index u = 0; u < store.num_users; ++u) {
    if (!store.train[u].empty()) users.push_back(u);
  }
  auto uf = user_forward(ent.layers, prefs, p, store, users);
  Matrix out = Matrix::Zero(store.num_users, p.dims.hidden);
  for (std::size_t k = 0; k < users.size(); ++k) out.row(users[k]) = uf.aggregated.row(k);
  return out;
}

struct ForwardTrace {
  EntityPropagation entities;
  PreferenceEmbeddings prefs;
  UserForward users;
  std::vector<Index> user_slot;  // batch row -> row of `users`
  std::vector<Triple> batch;
};

struct ForwardResult {
  ForwardTrace trace;
  Vector pos_scores;
  Vector neg_scores;

  RowVec user_agg(Index row) const { return trace.users.aggregated.row(trace.user_slot[row]); }
  RowVec item_agg(Index item) const { return trace.entities.final().row(item); }
};

inline ForwardResult forward(const KmpnParams& p, const KnowledgeGraph& g, const InteractionStore& store,
                             std::span<const Triple> batch) {
  for (const auto& t : batch) {
    if (t.user < 0 || t.user >= store.num_users || t.pos < 0 || t.pos >= store.num_items || t.neg < 0 ||
        t.neg >= store.num_items) {
      fail("forward: batch triple (", t.user, ", ", t.pos, ", ", t.neg, ") out of range");
    }
  }
  ForwardResult r;
  ForwardTrace& tr = r.trace;
  tr.batch.assign(batch.begin(), batch.end());
  tr.entities = propagate_entities(p, g);
  tr.prefs = preference_embeddings(p);

  std::vector<Index> users;
  for (const auto& t : batch) users.push_back(t.user);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  tr.user_slot.resize(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    tr.user_slot[k] = std::lower_bound(users.begin(), users.end(), batch[k].user) - users.begin();
  }
  tr.users = user_forward(tr.entities.layers, tr.prefs, p, store, users);

  const Matrix& items = tr.entities.final();
  r.pos_scores.resize(static_cast<Index>(batch.size()));
  r.neg_scores.resize(static_cast<Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto ua = tr.users.aggregated.row(tr.user_slot[k]);
    r.pos_scores[k] = ua.dot(items.row(batch[k].pos));
    r.neg_scores[k] = ua.dot(items.row(batch[k].neg));
  }
  return r;
}

// Upstream gradients of a scalar objective with respect to forward outputs.
struct KmpnUpstream {
  Matrix d_user;  // batch x h, w.r.t. each row's aggregated user embedding
  Matrix d_pos;   // batch x h, w.r.t. positive item aggregate
  Matrix d_neg;   // batch x h, w.r.t. negative item aggregate
  Matrix d_pref;  // N_p x h, w.r.t. preference embeddings (diversity loss)

  static KmpnUpstream zeros(Index batch, const KmpnDims& d) {
    return {Matrix::Zero(batch, d.hidden), Matrix::Zero(batch, d.hidden), Matrix::Zero(batch, d.hidden),
            Matrix::Zero(d.n_pref, d.hidden)};
  }

  // Folds score gradients d(obj)/d(pos_score), d(obj)/d(neg_score) in.
  void add_score_grads(const ForwardResult& fr, const Vector& d_pos_score, const Vector& d_neg_score) {
    const Matrix& items = fr.trace.entities.final();
    for (Index k = 0; k < d_user.rows(); ++k) {
      const auto& t = fr.trace.batch[k];
      const RowVec ua = fr.user_agg(k);
      d_user.row(k) += d_pos_score[k] * items.row(t.pos) + d_neg_score[k] * items.row(t.neg);
      d_pos.row(k) += d_pos_score[k] * ua;
      d_neg.row(k) += d_neg_score[k] * ua;
    }
  }
};

// Softmax backward: given y = softmax(x) and dL/dy, returns dL/dx.
inline RowVec softmax_backward(const RowVec& y, const RowVec& dy) {
  const double inner = y.dot(dy);
  return y.cwiseProduct((dy.array() - inner).matrix());
}

// Exact gradients of the objective whose upstream gradients are given.
inline KmpnParams backward(const KmpnParams& p, const KnowledgeGraph& g, const InteractionStore& store,
                           const ForwardTrace& tr, const KmpnUpstream& up) {
  const Index batch = static_cast<Index>(tr.batch.size());
  if (up.d_user.rows() != batch || up.d_pos.rows() != batch || up.d_neg.rows() != batch) {
    fail("backward: upstream batch size does not match trace (", batch, ")");
  }
  if (up.d_user.cols() != p.dims.hidden || up.d_pref.rows() != p.dims.n_pref ||
      up.d_pref.cols() != p.dims.hidden) {
    fail("backward: upstream gradient shape mismatch");
  }
  if (static_cast<Index>(tr.entities.layers.size()) != p.dims.layers + 1) {
    fail("backward: trace has ", tr.entities.layers.size() - 1, " layers, params have ", p.dims.layers);
  }

  KmpnParams grad = p.zeros_like();
  const Matrix& A = tr.entities.final();
  Matrix dA = Matrix::Zero(A.rows(), A.cols());
  Matrix d_pref = up.d_pref;

  const Index n_users = static_cast<Index>(tr.users.users.size());
  Matrix d_user_agg = Matrix::Zero(n_users, p.dims.hidden);
  for (Index k = 0; k < batch; ++k) {
    d_user_agg.row(tr.user_slot[k]) += up.d_user.row(k);
    dA.row(tr.batch[k].pos) += up.d_pos.row(k);
    dA.row(tr.batch[k].neg) += up.d_neg.row(k);
  }

  // Aggregated user embedding = mean(A over history) ⊙ mixed preference.
  const Matrix& P = tr.prefs.pref;
  for (Index k = 0; k < n_users; ++k) {
    const Index u = tr.users.users[k];
    const RowVec gk = d_user_agg.row(k);
    const RowVec d_mean = gk.cwiseProduct(tr.users.mixed_pref.row(k));
    const RowVec d_mixed = gk.cwiseProduct(tr.users.history_mean.row(k));
    const auto& hist = store.train[u];
    const double inv = 1.0 / static_cast<double>(hist.size());
    for (Index i : hist) dA.row(i) += inv * d_mean;

    const RowVec alpha = tr.users.alpha.row(k);
    const RowVec d_alpha = (P * d_mixed.transpose()).transpose();
    d_pref += alpha.transpose() * d_mixed;
    const RowVec d_logit = softmax_backward(alpha, d_alpha);
    d_pref += d_logit.transpose() * p.user.row(u);
    grad.user.row(u) += d_logit * P;
  }

  // Preferences: P = beta * M, beta = row softmax of logits.
  grad.meta += tr.prefs.beta.transpose() * d_pref;
  const Matrix d_beta = d_pref * p.meta.transpose();
  for (Index r = 0; r < p.dims.n_pref; ++r) {
    grad.pref_logits.row(r) = softmax_backward(tr.prefs.beta.row(r), d_beta.row(r));
  }

  // Every layer feeds the aggregate, so each layer starts from dA.
  Matrix G = dA;
  for (Index l = p.dims.layers - 1; l >= 0; --l) {
    const Matrix& X = tr.entities.layers[l];
    const auto& gates = tr.entities.gates[l];
    Matrix G_prev = dA;
    for (Index i = 0; i < g.num_entities(); ++i) {
      const Index deg = g.degree(i);
      if (deg == 0) continue;
      const RowVec gi = G.row(i) / static_cast<double>(deg);
      for (Index e = g.edge_begin(i); e < g.edge_end(i); ++e) {
        const Edge& edge = g.edge(e);
        const auto rel = p.relation.row(edge.relation);
        const auto xj = X.row(edge.tail);
        const double gate_v = gates[e];
        const RowVec msg = rel.cwiseProduct(xj);
        const double d_gate = gi.dot(msg);
        const RowVec d_msg = gate_v * gi;
        grad.relation.row(edge.relation) += d_msg.cwiseProduct(xj);
        G_prev.row(edge.tail) += d_msg.cwiseProduct(rel);
        const double d_z = d_gate * gate_v * (1.0 - gate_v);
        G_prev.row(i) += d_z * rel;
        grad.relation.row(edge.relation) += d_z * X.row(i);
      }
    }
    G = std::move(G_prev);
  }
  grad.entity = std::move(G);
  return grad;
}

}  // namespace kgrec
