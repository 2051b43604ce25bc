#pragma once

#include "kgrec/common.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kgrec {

using ItemList = std::vector<Index>;

enum class Split { train, valid, test, cold_history, cold_test };

inline const char* split_file_name(Split s) {
  switch (s) {
    case Split::train: return "train.txt";
    case Split::valid: return "valid.txt";
    case Split::test: return "test.txt";
    case Split::cold_history: return "cold_history.txt";
    case Split::cold_test: return "cold_test.txt";
  }
  return "";
}

// Per-user positive item lists. Every list is strictly ascending.
struct InteractionStore {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<ItemList> train;
  std::vector<ItemList> valid;
  std::vector<ItemList> test;
  std::vector<ItemList> cold_history;
  std::vector<ItemList> cold_test;
  bool has_valid = false;
  bool has_test = false;
  bool has_cold_start = false;
  // Items dropped while collapsing repeated ids inside a line.
  Index duplicates_collapsed = 0;

  const std::vector<ItemList>& lists(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::valid: return valid;
      case Split::test: return test;
      case Split::cold_history: return cold_history;
      case Split::cold_test: return cold_test;
    }
    return train;
  }

  std::vector<ItemList>& lists(Split s) {
    return const_cast<std::vector<ItemList>&>(std::as_const(*this).lists(s));
  }

  bool is_cold_user(Index u) const {
    return has_cold_start && (!cold_history[u].empty() || !cold_test[u].empty());
  }

  Index num_train_interactions() const {
    Index n = 0;
    for (const auto& l : train) n += static_cast<Index>(l.size());
    return n;
  }

  Index num_interactions() const {
    Index n = 0;
    for (auto s : {Split::train, Split::valid, Split::test, Split::cold_history, Split::cold_test}) {
      for (const auto& l : lists(s)) n += static_cast<Index>(l.size());
    }
    return n;
  }

  bool operator==(const InteractionStore& o) const {
    return num_users == o.num_users && num_items == o.num_items && train == o.train &&
           valid == o.valid && test == o.test && cold_history == o.cold_history &&
           cold_test == o.cold_test && has_valid == o.has_valid && has_test == o.has_test &&
           has_cold_start == o.has_cold_start;
  }
};

struct Edge {
  Index relation;
  Index tail;
  auto operator<=>(const Edge&) const = default;
};

// Relational graph in compressed adjacency form. Relation ids
// [num_relations_raw, 2 * num_relations_raw) are the inverses of the raw ones,
// and item id i is entity id i.
class KnowledgeGraph {
 public:
  KnowledgeGraph() : offsets_(1, 0) {}

  KnowledgeGraph(Index num_entities, Index num_relations_raw,
                 const std::vector<std::array<Index, 3>>& triplets)
      : num_entities_(num_entities), num_relations_raw_(num_relations_raw) {
    std::vector<std::vector<Edge>> adj(static_cast<std::size_t>(num_entities));
    for (const auto& [h, r, t] : triplets) {
      if (r < 0 || r >= num_relations_raw) {
        fail("relation ", r, " >= ", num_relations_raw);
      }
      if (h < 0 || h >= num_entities || t < 0 || t >= num_entities) {
        fail("entity id in triplet (", h, ", ", r, ", ", t, ") outside declared entity count ",
             num_entities);
      }
      adj[h].push_back({r, t});
      adj[t].push_back({r + num_relations_raw, h});
    }
    offsets_.assign(adj.size() + 1, 0);
    for (std::size_t i = 0; i < adj.size(); ++i) {
      auto& list = adj[i];
      std::sort(list.begin(), list.end());
      offsets_[i + 1] = offsets_[i] + static_cast<Index>(list.size());
      edges_.insert(edges_.end(), list.begin(), list.end());
    }
  }

  Index num_entities() const { return num_entities_; }
  Index num_relations_raw() const { return num_relations_raw_; }
  Index num_relations() const { return 2 * num_relations_raw_; }
  Index num_edges() const { return static_cast<Index>(edges_.size()); }
  Index num_triplets() const { return num_edges() / 2; }

  Index degree(Index node) const { return offsets_[node + 1] - offsets_[node]; }
  Index edge_begin(Index node) const { return offsets_[node]; }
  Index edge_end(Index node) const { return offsets_[node + 1]; }
  const Edge& edge(Index e) const { return edges_[e]; }
  const std::vector<Edge>& edges() const { return edges_; }

  std::span<const Edge> neighbors(Index node) const {
    return {edges_.data() + offsets_[node], static_cast<std::size_t>(degree(node))};
  }

  // Raw triplets in (head, relation, tail) order, recovered from forward edges.
  std::vector<std::array<Index, 3>> triplets() const {
    std::vector<std::array<Index, 3>> out;
    for (Index h = 0; h < num_entities_; ++h) {
      for (const auto& e : neighbors(h)) {
        if (e.relation < num_relations_raw_) out.push_back({h, e.relation, e.tail});
      }
    }
    return out;
  }

  bool operator==(const KnowledgeGraph& o) const {
    return num_entities_ == o.num_entities_ && num_relations_raw_ == o.num_relations_raw_ &&
           offsets_ == o.offsets_ && edges_ == o.edges_;
  }

 private:
  Index num_entities_ = 0;
  Index num_relations_raw_ = 0;
  std::vector<Index> offsets_;
  std::vector<Edge> edges_;
};

struct ItemCorpus {
  std::map<Index, std::string> texts;
  Index empty_texts = 0;

  std::string_view text(Index item) const {
    auto it = texts.find(item);
    return it == texts.end() ? std::string_view{} : std::string_view{it->second};
  }
};

// Optional `dataset.meta` key=value file declaring the id-space sizes.
struct DatasetMeta {
  std::optional<Index> num_users;
  std::optional<Index> num_items;
  std::optional<Index> num_entities;
  std::optional<Index> num_relations_raw;
};

struct Dataset {
  InteractionStore store;
  KnowledgeGraph graph;
  ItemCorpus corpus;
};

namespace detail {

inline bool is_sep(char c) { return c == ' ' || c == '\t' || c == '\r'; }

// Splits a line on tabs/spaces and parses non-negative integers.
inline std::vector<Index> parse_ids(std::string_view line, const std::string& where) {
  std::vector<Index> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !is_sep(line[j])) ++j;
    std::string_view tok = line.substr(i, j - i);
    Index v = 0;
    bool ok = !tok.empty();
    for (char c : tok) {
      if (c < '0' || c > '9') {
        ok = false;
        break;
      }
      v = v * 10 + (c - '0');
      if (v > (std::numeric_limits<Index>::max() / 10)) {
        ok = false;
        break;
      }
    }
    if (!ok) fail(where, ": malformed token '", tok, "'");
    out.push_back(v);
    i = j;
  }
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open ", path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path.string());
  return out;
}

struct RawSplit {
  std::map<Index, ItemList> rows;
  Index duplicates = 0;
  Index max_item = -1;
};

inline RawSplit read_split_file(const std::filesystem::path& path) {
  RawSplit raw;
  auto in = open_in(path);
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = concat(path.string(), ":", lineno);
    auto ids = parse_ids(line, where);
    if (ids.empty()) continue;
    const Index user = ids.front();
    if (raw.rows.count(user)) fail(where, ": user ", user, " appears on more than one line");
    ItemList items(ids.begin() + 1, ids.end());
    std::sort(items.begin(), items.end());
    auto last = std::unique(items.begin(), items.end());
    raw.duplicates += static_cast<Index>(items.end() - last);
    items.erase(last, items.end());
    if (!items.empty()) raw.max_item = std::max(raw.max_item, items.back());
    raw.rows.emplace(user, std::move(items));
  }
  return raw;
}

inline bool intersects(const ItemList& a, const ItemList& b, Index& witness) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      witness = *i;
      return true;
    }
  }
  return false;
}

}  // namespace detail

inline DatasetMeta load_meta(const std::filesystem::path& path) {
  DatasetMeta meta;
  if (!std::filesystem::exists(path)) return meta;
  auto in = detail::open_in(path);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const Index value = std::stoll(line.substr(eq + 1));
    if (key == "num_users") meta.num_users = value;
    else if (key == "num_items") meta.num_items = value;
    else if (key == "num_entities") meta.num_entities = value;
    else if (key == "num_relations_raw") meta.num_relations_raw = value;
  }
  return meta;
}

inline void write_meta(const std::filesystem::path& path, const DatasetMeta& meta) {
  auto out = detail::open_out(path);
  if (meta.num_users) out << "num_users=" << *meta.num_users << "\n";
  if (meta.num_items) out << "num_items=" << *meta.num_items << "\n";
  if (meta.num_entities) out << "num_entities=" << *meta.num_entities << "\n";
  if (meta.num_relations_raw) out << "num_relations_raw=" << *meta.num_relations_raw << "\n";
}

// Checks every InteractionStore invariant; throws naming the first violation.
inline void validate(const InteractionStore& s) {
  const auto nu = static_cast<std::size_t>(s.num_users);
  for (auto split : {Split::train, Split::valid, Split::test, Split::cold_history, Split::cold_test}) {
    const auto& lists = s.lists(split);
    if (lists.size() != nu) fail(split_file_name(split), ": expected ", nu, " user rows");
    for (Index u = 0; u < s.num_users; ++u) {
      const auto& l = lists[u];
      for (std::size_t k = 0; k < l.size(); ++k) {
        if (l[k] < 0 || l[k] >= s.num_items) {
          fail(split_file_name(split), ": user ", u, " item ", l[k], " outside [0, ", s.num_items, ")");
        }
        if (k > 0 && l[k] <= l[k - 1]) fail(split_file_name(split), ": user ", u, " list not strictly ascending");
      }
    }
  }
  const std::pair<Split, Split> pairs[] = {
      {Split::train, Split::valid}, {Split::train, Split::test}, {Split::valid, Split::test}};
  for (Index u = 0; u < s.num_users; ++u) {
    for (auto [a, b] : pairs) {
      Index item = -1;
      if (detail::intersects(s.lists(a)[u], s.lists(b)[u], item)) {
        fail("overlapping splits: user ", u, " item ", item, " in both ", split_file_name(a), " and ",
             split_file_name(b));
      }
    }
    const bool cold = !s.cold_history[u].empty() || !s.cold_test[u].empty();
    if (cold && (!s.train[u].empty() || !s.valid[u].empty() || !s.test[u].empty())) {
      fail("cold-start user ", u, " also appears in train/valid/test");
    }
  }
}

// Reads the split files found in `dir` (train.txt required). Users missing
// from a file get an empty list; user ids must be dense across all files.
inline InteractionStore load_interactions(const std::filesystem::path& dir,
                                          std::optional<Index> num_items = std::nullopt,
                                          std::optional<Index> num_users = std::nullopt) {
  namespace fs = std::filesystem;
  const auto train_path = dir / split_file_name(Split::train);
  if (!fs::exists(train_path)) fail("missing ", train_path.string());

  std::map<Split, detail::RawSplit> raws;
  for (auto split : {Split::train, Split::valid, Split::test, Split::cold_history, Split::cold_test}) {
    const auto path = dir / split_file_name(split);
    if (fs::exists(path)) raws.emplace(split, detail::read_split_file(path));
  }
  const bool has_cold_h = raws.count(Split::cold_history) > 0;
  const bool has_cold_t = raws.count(Split::cold_test) > 0;
  if (has_cold_h != has_cold_t) fail("cold_history.txt and cold_test.txt must be provided together");

  InteractionStore s;
  s.has_valid = raws.count(Split::valid) > 0;
  s.has_test = raws.count(Split::test) > 0;
  s.has_cold_start = has_cold_h;

  Index max_user = -1;
  Index max_item = -1;
  for (const auto& [split, raw] : raws) {
    if (!raw.rows.empty()) max_user = std::max(max_user, raw.rows.rbegin()->first);
    max_item = std::max(max_item, raw.max_item);
    s.duplicates_collapsed += raw.duplicates;
  }
  s.num_users = num_users.value_or(max_user + 1);
  s.num_items = num_items.value_or(max_item + 1);
  if (max_user >= s.num_users) fail("user id ", max_user, " outside declared user count ", s.num_users);
  if (max_item >= s.num_items) fail("item id ", max_item, " outside declared item count ", s.num_items);

  std::vector<char> seen(static_cast<std::size_t>(s.num_users), 0);
  for (auto split : {Split::train, Split::valid, Split::test, Split::cold_history, Split::cold_test}) {
    auto& lists = s.lists(split);
    lists.assign(static_cast<std::size_t>(s.num_users), {});
    auto it = raws.find(split);
    if (it == raws.end()) continue;
    for (auto& [u, items] : it->second.rows) {
      lists[u] = std::move(items);
      seen[u] = 1;
    }
  }
  if (!num_users) {
    for (Index u = 0; u < s.num_users; ++u) {
      if (!seen[u]) fail("non-dense user ids: user ", u, " appears in no split file");
    }
  }
  validate(s);
  return s;
}

// Writes the store as split files. Non-cold users always get a train line so
// that the user count survives a reload.
inline void write_interactions(const InteractionStore& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](Split split, bool include_empty_noncold) {
    auto out = detail::open_out(dir / split_file_name(split));
    const auto& lists = s.lists(split);
    for (Index u = 0; u < s.num_users; ++u) {
      const bool cold = s.is_cold_user(u);
      const bool is_cold_file = split == Split::cold_history || split == Split::cold_test;
      if (lists[u].empty() && !(include_empty_noncold && cold == is_cold_file)) continue;
      out << u;
      for (Index i : lists[u]) out << ' ' << i;
      out << '\n';
    }
  };
  write(Split::train, true);
  if (s.has_valid) write(Split::valid, false);
  if (s.has_test) write(Split::test, false);
  if (s.has_cold_start) {
    write(Split::cold_history, true);
    write(Split::cold_test, false);
  }
}

// Reads `head relation tail` lines. When num_entities is not given it is the
// largest id seen plus one.
inline KnowledgeGraph load_kg(const std::filesystem::path& path, Index num_relations_raw,
                              std::optional<Index> num_entities = std::nullopt) {
  auto in = detail::open_in(path);
  std::vector<std::array<Index, 3>> triplets;
  std::string line;
  Index lineno = 0;
  Index max_entity = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = concat(path.string(), ":", lineno);
    auto ids = detail::parse_ids(line, where);
    if (ids.empty()) continue;
    if (ids.size() != 3) fail(where, ": expected 'head relation tail'");
    if (ids[1] >= num_relations_raw) fail(where, ": relation ", ids[1], " >= ", num_relations_raw);
    if (num_entities && (ids[0] >= *num_entities || ids[2] >= *num_entities)) {
      fail(where, ": entity id ", std::max(ids[0], ids[2]), " beyond declared entity count ", *num_entities);
    }
    max_entity = std::max({max_entity, ids[0], ids[2]});
    triplets.push_back({ids[0], ids[1], ids[2]});
  }
  return KnowledgeGraph(num_entities.value_or(max_entity + 1), num_relations_raw, triplets);
}

inline void write_kg(const KnowledgeGraph& g, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  for (const auto& [h, r, t] : g.triplets()) out << h << ' ' << r << ' ' << t << '\n';
}

// Largest relation id in a kg file plus one; 0 for an empty file.
inline Index scan_num_relations(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::string line;
  Index lineno = 0;
  Index max_rel = -1;
  while (std::getline(in, line)) {
    ++lineno;
    auto ids = detail::parse_ids(line, concat(path.string(), ":", lineno));
    if (ids.size() == 3) max_rel = std::max(max_rel, ids[1]);
  }
  return max_rel + 1;
}

inline ItemCorpus load_corpus(const std::filesystem::path& path, Index num_items) {
  auto in = detail::open_in(path);
  ItemCorpus corpus;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string where = concat(path.string(), ":", lineno);
    auto ids = detail::parse_ids(std::string_view(line).substr(0, tab), where);
    if (ids.size() != 1) fail(where, ": expected 'item_id<TAB>description'");
    if (ids[0] >= num_items) fail(where, ": item ", ids[0], " outside [0, ", num_items, ")");
    std::string text = tab == std::string::npos ? std::string{} : line.substr(tab + 1);
    if (text.empty()) ++corpus.empty_texts;
    if (!corpus.texts.emplace(ids[0], std::move(text)).second) fail(where, ": duplicate item ", ids[0]);
  }
  return corpus;
}

inline void write_corpus(const ItemCorpus& corpus, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  for (const auto& [id, text] : corpus.texts) out << id << '\t' << text << '\n';
}

// Loads a dataset directory: split files, kg.txt, optional items.tsv and dataset.meta.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail("dataset directory not found: ", dir.string());
  const auto meta = load_meta(dir / "dataset.meta");
  const auto kg_path = dir / "kg.txt";
  if (!fs::exists(kg_path)) fail("missing ", kg_path.string());

  Dataset ds;
  ds.store = load_interactions(dir, meta.num_items, meta.num_users);
  const Index nr = meta.num_relations_raw.value_or(scan_num_relations(kg_path));
  ds.graph = load_kg(kg_path, nr, meta.num_entities);
  if (ds.graph.num_entities() < ds.store.num_items) {
    if (meta.num_entities) {
      fail("declared entity count ", *meta.num_entities, " smaller than item count ", ds.store.num_items);
    }
    ds.graph = load_kg(kg_path, nr, ds.store.num_items);
  }
  if (fs::exists(dir / "items.tsv")) ds.corpus = load_corpus(dir / "items.tsv", ds.store.num_items);
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  write_interactions(ds.store, dir);
  write_kg(ds.graph, dir / "kg.txt");
  write_corpus(ds.corpus, dir / "items.tsv");
  DatasetMeta meta;
  meta.num_users = ds.store.num_users;
  meta.num_items = ds.store.num_items;
  meta.num_entities = ds.graph.num_entities();
  meta.num_relations_raw = ds.graph.num_relations_raw();
  write_meta(dir / "dataset.meta", meta);
}

}  // namespace kgrec
