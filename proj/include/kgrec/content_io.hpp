#pragma once

#include "kgrec/content.hpp"
#include "kgrec/embedding_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace kgrec {

// `CNTP1 V_b h B K` header line, then every tensor as little-endian float64.
inline void save_content_params(const ContentParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path.string());
  out << "CNTP1 " << p.hyper.buckets << ' ' << p.hyper.hidden << ' ' << p.hyper.history << ' '
      << p.hyper.negatives << '\n';
  p.for_each([&](std::string_view, const Matrix& m) { detail::write_tensor(out, m); });
}

inline ContentParams load_content_params(const std::filesystem::path& path) {
  const std::string ps = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", ps);
  std::string header;
  if (!std::getline(in, header)) fail(ps, ": empty content checkpoint");
  std::istringstream hs(header);
  std::string magic;
  ContentHyper h;
  if (!(hs >> magic >> h.buckets >> h.hidden >> h.history >> h.negatives) || magic != "CNTP1") {
    fail(ps, ": bad content checkpoint header '", header, "'");
  }
  ContentParams p = ContentParams::zeros(h);
  p.for_each([&](std::string_view, Matrix& m) { detail::read_tensor(in, m, ps); });
  if (in.peek() != std::char_traits<char>::eof()) fail(ps, ": trailing bytes after content tensors");
  return p;
}

// Paths ending in ".txt" use the text format, anything else the binary one.
inline void write_embeddings(const EmbeddingMatrixFile& f, const std::filesystem::path& path) {
  if (path.extension() == ".txt") write_embeddings_text(f, path);
  else write_embeddings_binary(f, path);
}

struct ContentExport {
  EmbeddingMatrixFile items;
  EmbeddingMatrixFile users;
};

inline ContentExport export_embeddings(const ContentParams& p, const ItemCorpus& corpus, const InteractionStore& store) {
  const Matrix items = content_item_embeddings(corpus, store.num_items, p);
  const Matrix users = content_user_embeddings(store, items, p);
  return {EmbeddingMatrixFile::from_table(EmbeddingKind::item, items),
          EmbeddingMatrixFile::from_table(EmbeddingKind::user, users)};
}

inline ContentExport export_embeddings(const ContentParams& p, const ItemCorpus& corpus, const InteractionStore& store,
                                       const std::filesystem::path& item_path, const std::filesystem::path& user_path) {
  auto ex = export_embeddings(p, corpus, store);
  write_embeddings(ex.items, item_path);
  write_embeddings(ex.users, user_path);
  return ex;
}

inline EmbeddingMatrixFile import_embeddings(const std::filesystem::path& path) { return read_embeddings(path); }

}  // namespace kgrec
