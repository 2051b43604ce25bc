#pragma once

#include "kgrec/content.hpp"
#include "kgrec/kmpn.hpp"
#include "kgrec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace kgrec {

enum class ModelKind { kmpn, ckmpn, content };

struct GradCheckSpec {
  // KMPN / CKMPN instance
  Index num_entities = 12;
  Index num_items = 6;
  Index num_users = 5;
  Index num_relations_raw = 2;
  Index num_triplets = 16;
  Index batch = 6;
  KmpnDims dims{8, 2, 4, 4};
  LossWeights weights{0.1, 0.5, 0.3, 0.5};
  // Content instance
  ContentHyper content{8, 16, 3, 2};
  Index content_items = 10;
  Index content_instances = 4;

  double step = 1e-4;
  std::uint64_t seed = 1;
};

struct TensorReport {
  std::string name;
  Index size = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  ModelKind kind = ModelKind::kmpn;
  double tolerance = 0.0;
  std::vector<TensorReport> tensors;
  double max_rel_error = 0.0;
  bool ok = true;
};

// |a - b| / max(|a|, |b|, floor). The floor keeps exact zeros (and values at
// FD noise level) from dominating the ratio.
inline constexpr double kRelErrorFloor = 1e-5;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

// Central differences over every scalar of `params`, compared against `grad`.
template <typename Params, typename Objective>
GradCheckReport compare_gradients(Params params, const Params& grad, Objective&& objective, double step,
                                  double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;
  std::vector<const Matrix*> analytic;
  grad.for_each([&](std::string_view, const Matrix& m) { analytic.push_back(&m); });
  std::size_t idx = 0;
  std::vector<std::pair<std::string, Matrix*>> tensors;
  params.for_each([&](std::string_view name, Matrix& m) { tensors.emplace_back(std::string(name), &m); });
  for (auto& [name, m] : tensors) {
    TensorReport tr;
    tr.name = name;
    tr.size = m->size();
    const Matrix& a = *analytic.at(idx++);
    for (Index r = 0; r < m->rows(); ++r) {
      for (Index c = 0; c < m->cols(); ++c) {
        const double orig = (*m)(r, c);
        (*m)(r, c) = orig + step;
        const double up = objective(params);
        (*m)(r, c) = orig - step;
        const double down = objective(params);
        (*m)(r, c) = orig;
        const double numeric = (up - down) / (2.0 * step);
        tr.max_rel_error = std::max(tr.max_rel_error, relative_error(a(r, c), numeric));
        tr.max_abs_error = std::max(tr.max_abs_error, std::abs(a(r, c) - numeric));
      }
    }
    tr.ok = tr.max_rel_error < tolerance;
    report.ok = report.ok && tr.ok;
    report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
    report.tensors.push_back(std::move(tr));
  }
  return report;
}

struct KmpnInstance {
  KnowledgeGraph graph;
  InteractionStore store;
  KmpnParams params;
  std::vector<Triple> batch;
  ContentAnchors content;
};

// Random small instance: every item has at least one KG edge and every user
// at least one train item.
inline KmpnInstance make_kmpn_instance(const GradCheckSpec& s) {
  Rng rng(s.seed);
  KmpnInstance inst;
  std::vector<std::array<Index, 3>> triplets;
  for (Index i = 0; i < s.num_items; ++i) {
    triplets.push_back({i, static_cast<Index>(rng.below(s.num_relations_raw)),
                        s.num_items + static_cast<Index>(rng.below(s.num_entities - s.num_items))});
  }
  while (static_cast<Index>(triplets.size()) < s.num_triplets) {
    const Index h = static_cast<Index>(rng.below(s.num_entities));
    const Index t = static_cast<Index>(rng.below(s.num_entities));
    if (h != t) triplets.push_back({h, static_cast<Index>(rng.below(s.num_relations_raw)), t});
  }
  inst.graph = KnowledgeGraph(s.num_entities, s.num_relations_raw, triplets);

  auto& st = inst.store;
  st.num_users = s.num_users;
  st.num_items = s.num_items;
  for (auto split : {Split::train, Split::valid, Split::test, Split::cold_history, Split::cold_test}) {
    st.lists(split).assign(s.num_users, {});
  }
  for (Index u = 0; u < s.num_users; ++u) {
    for (Index i = 0; i < s.num_items; ++i) {
      if (rng.uniform() < 0.4) st.train[u].push_back(i);
    }
    if (st.train[u].empty()) st.train[u].push_back(static_cast<Index>(rng.below(s.num_items)));
    if (static_cast<Index>(st.train[u].size()) == s.num_items) st.train[u].pop_back();
  }
  validate(st);

  inst.params = KmpnParams::init(s.num_entities, 2 * s.num_relations_raw, s.num_users, s.dims, rng);
  // Wider logits than the training init so preference rows are well
  // separated; near-identical rows put the distance terms at FD-step scale.
  fill_uniform(inst.params.pref_logits, rng, 2.0);
  for (Index k = 0; k < s.batch; ++k) {
    const Index u = static_cast<Index>(rng.below(s.num_users));
    const auto& tr = st.train[u];
    const Index pos = tr[rng.below(tr.size())];
    Index neg = pos;
    while (std::binary_search(tr.begin(), tr.end(), neg)) neg = static_cast<Index>(rng.below(s.num_items));
    inst.batch.push_back({u, pos, neg});
  }
  inst.content.user = Matrix(s.num_users, s.dims.hidden);
  inst.content.item = Matrix(s.num_items, s.dims.hidden);
  fill_uniform(inst.content.user, rng, 1.0);
  fill_uniform(inst.content.item, rng, 1.0);
  return inst;
}

inline GradCheckReport grad_check_kmpn(const GradCheckSpec& s, double tolerance, LossMode mode) {
  const KmpnInstance inst = make_kmpn_instance(s);
  const ContentAnchors* content = mode == LossMode::ckmpn ? &inst.content : nullptr;
  const auto base = kmpn_objective(inst.params, inst.graph, inst.store, inst.batch, s.weights, mode, content);
  const std::optional<Matrix> basis = base.basis.size() ? std::optional<Matrix>(base.basis) : std::nullopt;
  auto objective = [&](const KmpnParams& p) {
    return kmpn_objective(p, inst.graph, inst.store, inst.batch, s.weights, mode, content, basis, false).total;
  };
  auto report = compare_gradients(inst.params, base.grad, objective, s.step, tolerance);
  report.kind = mode == LossMode::ckmpn ? ModelKind::ckmpn : ModelKind::kmpn;
  return report;
}

struct ContentInstance {
  ItemCorpus corpus;
  std::vector<std::vector<Index>> buckets;
  ContentParams params;
  std::vector<ClickInstance> clicks;
};

inline ContentInstance make_content_instance(const GradCheckSpec& s) {
  Rng rng(s.seed + 17);
  ContentInstance inst;
  for (Index i = 0; i < s.content_items; ++i) {
    std::string text;
    const Index n_tok = 2 + static_cast<Index>(rng.below(5));
    for (Index t = 0; t < n_tok; ++t) text += concat(t ? " " : "", "tok", rng.below(40));
    inst.corpus.texts.emplace(i, text);
  }
  inst.buckets = corpus_buckets(inst.corpus, s.content_items, s.content.buckets);
  inst.params = ContentParams::init(s.content, rng);
  fill_uniform(inst.params.fc1_b, rng, 0.5);
  fill_uniform(inst.params.fc2_b, rng, 0.5);
  for (Index c = 0; c < s.content_instances; ++c) {
    ClickInstance ci;
    for (Index b = 0; b < s.content.history; ++b) ci.history.push_back(static_cast<Index>(rng.below(s.content_items)));
    ci.pos = static_cast<Index>(rng.below(s.content_items));
    for (Index k = 0; k < s.content.negatives; ++k) ci.negs.push_back(static_cast<Index>(rng.below(s.content_items)));
    inst.clicks.push_back(std::move(ci));
  }
  return inst;
}

inline GradCheckReport grad_check_content(const GradCheckSpec& s, double tolerance) {
  const ContentInstance inst = make_content_instance(s);
  auto objective = [&](const ContentParams& p) {
    double total = 0.0;
    for (const auto& ci : inst.clicks) total += click_instance_loss(ci, inst.buckets, p, nullptr);
    return total;
  };
  ContentParams grad = inst.params.zeros_like();
  for (const auto& ci : inst.clicks) click_instance_loss(ci, inst.buckets, inst.params, &grad);
  auto report = compare_gradients(inst.params, grad, objective, s.step, tolerance);
  report.kind = ModelKind::content;
  return report;
}

inline GradCheckReport grad_check(ModelKind kind, const GradCheckSpec& s, double tolerance) {
  switch (kind) {
    case ModelKind::kmpn: return grad_check_kmpn(s, tolerance, LossMode::kmpn);
    case ModelKind::ckmpn: return grad_check_kmpn(s, tolerance, LossMode::ckmpn);
    case ModelKind::content: return grad_check_content(s, tolerance);
  }
  return {};
}

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kmpn: return "kmpn";
    case ModelKind::ckmpn: return "ckmpn";
    case ModelKind::content: return "content";
  }
  return "?";
}

}  // namespace kgrec
