#pragma once

#include "kgrec/common.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace kgrec {

enum class EmbeddingKind : std::uint8_t { user = 0, item = 1 };

inline const char* kind_name(EmbeddingKind k) { return k == EmbeddingKind::user ? "user" : "item"; }

// Rows of (id, vector). Values are held at float32 precision, the precision
// of the binary format, so every format round-trips exactly.
struct EmbeddingMatrixFile {
  EmbeddingKind kind = EmbeddingKind::item;
  std::vector<Index> ids;
  Matrix values;

  Index count() const { return static_cast<Index>(ids.size()); }
  Index dim() const { return values.cols(); }

  static EmbeddingMatrixFile from_table(EmbeddingKind kind, const Matrix& table) {
    EmbeddingMatrixFile f;
    f.kind = kind;
    f.ids.resize(static_cast<std::size_t>(table.rows()));
    for (Index i = 0; i < table.rows(); ++i) f.ids[i] = i;
    f.values = table.cast<float>().cast<double>();
    return f;
  }

  void check_dim(Index expected) const {
    if (dim() != expected) {
      fail(kind_name(kind), " embedding file has dim ", dim(), " but the model uses h = ", expected);
    }
  }

  // Dense table indexed by id; every id in [0, n) must be present.
  Matrix dense(Index n) const {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    Matrix out = Matrix::Zero(n, dim());
    for (Index r = 0; r < count(); ++r) {
      if (ids[r] < 0 || ids[r] >= n) continue;
      seen[ids[r]] = 1;
      out.row(ids[r]) = values.row(r);
    }
    for (Index i = 0; i < n; ++i) {
      if (!seen[i]) fail("content ", kind_name(kind), " file missing ", kind_name(kind), " ", i);
    }
    return out;
  }

  bool operator==(const EmbeddingMatrixFile& o) const {
    return kind == o.kind && ids == o.ids && values.rows() == o.values.rows() && values.cols() == o.values.cols() &&
           values == o.values;
  }
};

namespace detail {

inline void check_embedding_file(const EmbeddingMatrixFile& f) {
  std::set<Index> seen;
  for (Index id : f.ids) {
    if (!seen.insert(id).second) fail("embedding file: duplicate id ", id);
  }
  if (!f.values.allFinite()) fail("embedding file: non-finite values");
}

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(path, ": truncated embedding file");
  return v;
}

inline void write_tensor(std::ostream& out, const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) put_le<double>(out, m(r, c));
  }
}

inline void read_tensor(std::istream& in, Matrix& m, const std::string& path) {
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = get_le<double>(in, path);
  }
}

}  // namespace detail

// `EMB1 kind count dim`, then `id v1 ... v_dim` with 9 significant digits.
inline void write_embeddings_text(const EmbeddingMatrixFile& f, const std::filesystem::path& path) {
  detail::check_embedding_file(f);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path.string());
  out << "EMB1 " << kind_name(f.kind) << ' ' << f.count() << ' ' << f.dim() << '\n';
  char buf[64];
  for (Index r = 0; r < f.count(); ++r) {
    out << f.ids[r];
    for (Index c = 0; c < f.dim(); ++c) {
      std::snprintf(buf, sizeof(buf), " %.9g", static_cast<double>(static_cast<float>(f.values(r, c))));
      out << buf;
    }
    out << '\n';
  }
}

// Magic `CSEM`, u32 version 1, u8 kind, u64 count, u32 dim, then per row a
// u64 id and dim float32 values, all little-endian.
inline void write_embeddings_binary(const EmbeddingMatrixFile& f, const std::filesystem::path& path) {
  detail::check_embedding_file(f);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path.string());
  out.write("CSEM", 4);
  detail::put_le<std::uint32_t>(out, 1);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(f.kind));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(f.count()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.dim()));
  for (Index r = 0; r < f.count(); ++r) {
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(f.ids[r]));
    for (Index c = 0; c < f.dim(); ++c) detail::put_le<float>(out, static_cast<float>(f.values(r, c)));
  }
}

inline EmbeddingMatrixFile read_embeddings(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", p);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in) fail(p, ": empty or truncated embedding file");
  EmbeddingMatrixFile f;
  if (std::memcmp(magic, "CSEM", 4) == 0) {
    const auto version = detail::get_le<std::uint32_t>(in, p);
    if (version != 1) fail(p, ": unsupported embedding file version ", version);
    const auto kind = detail::get_le<std::uint8_t>(in, p);
    if (kind > 1) fail(p, ": bad embedding kind ", static_cast<int>(kind));
    f.kind = static_cast<EmbeddingKind>(kind);
    const auto count = detail::get_le<std::uint64_t>(in, p);
    const auto dim = detail::get_le<std::uint32_t>(in, p);
    f.ids.resize(count);
    f.values.resize(static_cast<Index>(count), dim);
    for (std::uint64_t r = 0; r < count; ++r) {
      f.ids[r] = static_cast<Index>(detail::get_le<std::uint64_t>(in, p));
      for (std::uint32_t c = 0; c < dim; ++c) f.values(r, c) = detail::get_le<float>(in, p);
    }
  } else if (std::memcmp(magic, "EMB1", 4) == 0) {
    std::string kind;
    Index count = -1;
    Index dim = -1;
    if (!(in >> kind >> count >> dim) || count < 0 || dim < 0) fail(p, ": malformed EMB1 header");
    if (kind == "user") f.kind = EmbeddingKind::user;
    else if (kind == "item") f.kind = EmbeddingKind::item;
    else fail(p, ": unknown embedding kind '", kind, "'");
    f.ids.resize(static_cast<std::size_t>(count));
    f.values.resize(count, dim);
    for (Index r = 0; r < count; ++r) {
      if (!(in >> f.ids[r])) fail(p, ": truncated at row ", r);
      for (Index c = 0; c < dim; ++c) {
        double v = 0.0;
        if (!(in >> v)) fail(p, ": row ", r, " has fewer than ", dim, " values");
        f.values(r, c) = static_cast<float>(v);
      }
    }
  } else {
    fail(p, ": unrecognised embedding file header");
  }
  detail::check_embedding_file(f);
  return f;
}

}  // namespace kgrec
