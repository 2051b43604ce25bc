#pragma once

#include "kgrec/kgrec.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace testing_support {

using namespace kgrec;
namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "kgrec") {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double bound = 1.0) {
  Matrix m(rows, cols);
  fill_uniform(m, rng, bound);
  return m;
}

inline RowVec random_row(Index n, Rng& rng, double bound = 1.0) {
  RowVec v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-bound, bound);
  return v;
}

inline std::vector<std::array<Index, 3>> random_triplets(Index num_entities, Index nr, Index count, Rng& rng) {
  std::vector<std::array<Index, 3>> t;
  while (static_cast<Index>(t.size()) < count) {
    const auto h = static_cast<Index>(rng.below(num_entities));
    const auto tail = static_cast<Index>(rng.below(num_entities));
    if (h != tail) t.push_back({h, static_cast<Index>(rng.below(nr)), tail});
  }
  return t;
}

// Gated convolution recomputed from the raw triplet list with explicit loops
// over (node, edge, coordinate).
inline Matrix conv_oracle(const Matrix& prev, Index num_entities, Index nr,
                          const std::vector<std::array<Index, 3>>& triplets, const Matrix& relation) {
  const Index h = prev.cols();
  Matrix out = Matrix::Zero(num_entities, h);
  std::vector<Index> deg(static_cast<std::size_t>(num_entities), 0);
  auto add = [&](Index head, Index rel, Index tail) {
    double dot = 0.0;
    for (Index c = 0; c < h; ++c) dot += prev(head, c) * relation(rel, c);
    const double g = 1.0 / (1.0 + std::exp(-dot));
    for (Index c = 0; c < h; ++c) out(head, c) += g * relation(rel, c) * prev(tail, c);
    ++deg[head];
  };
  for (const auto& [hd, r, t] : triplets) {
    add(hd, r, t);
    add(t, r + nr, hd);
  }
  for (Index i = 0; i < num_entities; ++i) {
    if (deg[i] > 0) {
      for (Index c = 0; c < h; ++c) out(i, c) /= static_cast<double>(deg[i]);
    }
  }
  return out;
}

inline std::vector<double> softmax_oracle(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - mx);
    z += e[i];
  }
  for (auto& v : e) v /= z;
  return e;
}

// Cyclic Jacobi eigensolver for symmetric matrices. Returns eigenvalues in
// descending order with eigenvectors as matching columns.
inline std::pair<std::vector<double>, Eigen::MatrixXd> jacobi_eigen(Eigen::MatrixXd a) {
  const Index n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-30) break;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](Index x, Index y) { return a(x, x) > a(y, y); });
  std::vector<double> vals;
  Eigen::MatrixXd vecs(n, n);
  for (Index i = 0; i < n; ++i) {
    vals.push_back(a(order[i], order[i]));
    vecs.col(i) = v.col(order[i]);
  }
  return {vals, vecs};
}

// Distance correlation from explicit double-centring loops.
inline double dcorr_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto centred = [n](const std::vector<double>& v) {
    std::vector<std::vector<double>> d(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::abs(v[i] - v[j]);
    }
    std::vector<double> row(n, 0.0), col(n, 0.0);
    double all = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        row[i] += d[i][j] / n;
        col[j] += d[i][j] / n;
        all += d[i][j] / (n * n);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i][j] = d[i][j] - row[i] - col[j] + all;
    }
    return d;
  };
  const auto a = centred(x);
  const auto b = centred(y);
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      xy += a[i][j] * b[i][j];
      xx += a[i][j] * a[i][j];
      yy += b[i][j] * b[i][j];
    }
  }
  const double nn = static_cast<double>(n * n);
  xy /= nn;
  xx /= nn;
  yy /= nn;
  const double dvx = std::sqrt(xx), dvy = std::sqrt(yy);
  if (dvx < 1e-12 || dvy < 1e-12 || xy <= 0.0) return 0.0;
  return std::sqrt(xy) / std::sqrt(dvx * dvy);
}

inline std::vector<double> to_vec(const RowVec& v) { return {v.data(), v.data() + v.size()}; }

// PCA projection and pairwise distance correlation composed from the two
// independent oracles above.
inline double soft_dcorr_oracle(const Matrix& pref, double epsilon) {
  const Index np = pref.rows(), h = pref.cols();
  Eigen::MatrixXd centred = pref;
  for (Index c = 0; c < h; ++c) {
    double mean = 0.0;
    for (Index r = 0; r < np; ++r) mean += pref(r, c) / static_cast<double>(np);
    for (Index r = 0; r < np; ++r) centred(r, c) -= mean;
  }
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(np - 1);
  auto [vals, vecs] = jacobi_eigen(cov);
  const Index k = std::min({std::max<Index>(1, static_cast<Index>(std::floor(epsilon * h))), h, np});
  Eigen::MatrixXd basis(h, k);
  for (Index c = 0; c < k; ++c) {
    Eigen::VectorXd col = vecs.col(c);
    Index arg = 0;
    for (Index r = 1; r < h; ++r) {
      if (std::abs(col[r]) > std::abs(col[arg])) arg = r;
    }
    if (col[arg] < 0) col = -col;
    basis.col(c) = col;
  }
  const Eigen::MatrixXd z = centred * basis;
  double total = 0.0;
  for (Index p = 0; p < np; ++p) {
    for (Index q = p + 1; q < np; ++q) total += dcorr_oracle(to_vec(z.row(p)), to_vec(z.row(q)));
  }
  return total;
}

// Metric oracles over plain sets.
inline double recall_oracle(const std::vector<Index>& topk, const std::vector<Index>& test) {
  std::set<Index> t(test.begin(), test.end());
  Index hits = 0;
  for (Index i : topk) hits += t.count(i);
  return static_cast<double>(hits) / static_cast<double>(t.size());
}

inline double ndcg_oracle(const std::vector<Index>& topk, const std::vector<Index>& test, Index K) {
  std::set<Index> t(test.begin(), test.end());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < topk.size(); ++r) {
    if (t.count(topk[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  for (Index r = 0; r < std::min<Index>(K, static_cast<Index>(t.size())); ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / idcg;
}

inline double hit_oracle(const std::vector<Index>& topk, const std::vector<Index>& test) {
  for (Index i : topk) {
    if (std::find(test.begin(), test.end(), i) != test.end()) return 1.0;
  }
  return 0.0;
}

// Full sort of all unmasked items by (score desc, id asc).
inline std::vector<Index> rank_oracle(const std::vector<double>& scores, const std::set<Index>& mask, Index K) {
  std::vector<std::pair<double, Index>> all;
  for (Index i = 0; i < static_cast<Index>(scores.size()); ++i) {
    if (!mask.count(i)) all.emplace_back(-scores[i], i);
  }
  std::sort(all.begin(), all.end());
  std::vector<Index> out;
  for (std::size_t r = 0; r < all.size() && static_cast<Index>(r) < K; ++r) out.push_back(all[r].second);
  return out;
}

// Random top-K instance: scores on a coarse grid so ties occur, a random
// train mask, and a non-empty test set drawn from the unmasked items.
struct RankingCase {
  std::vector<double> scores;
  std::set<Index> mask;
  ItemList test;
};

inline RankingCase random_ranking_case(Rng& rng) {
  RankingCase c;
  const Index n = 2 + static_cast<Index>(rng.below(49));
  for (Index i = 0; i < n; ++i) c.scores.push_back(std::round(rng.uniform(-1.0, 1.0) * 10.0) / 10.0);
  std::vector<Index> open;
  for (Index i = 0; i < n; ++i) {
    if (rng.uniform() < 0.3) c.mask.insert(i);
  }
  if (static_cast<Index>(c.mask.size()) == n) c.mask.erase(c.mask.begin());
  for (Index i = 0; i < n; ++i) {
    if (!c.mask.count(i)) open.push_back(i);
  }
  rng.shuffle(open);
  const auto t = 1 + rng.below(std::min<std::uint64_t>(10, open.size()));
  c.test.assign(open.begin(), open.begin() + static_cast<std::ptrdiff_t>(t));
  std::sort(c.test.begin(), c.test.end());
  return c;
}

struct RankingCheck {
  double max_diff = 0.0;
  bool same_ranking = true;
  bool monotone = true;
};

// Library metrics against the brute-force oracles for K in {1, 5, 20}.
inline RankingCheck check_ranking_case(const RankingCase& c) {
  const Index n = static_cast<Index>(c.scores.size());
  Matrix items(n, 1);
  for (Index i = 0; i < n; ++i) items(i, 0) = c.scores[i];
  RowVec user(1);
  user << 1.0;
  const ItemList mask(c.mask.begin(), c.mask.end());
  RankingCheck out;
  double prev_recall = -1.0, prev_hit = -1.0;
  for (Index K : {1, 5, 20}) {
    const auto top = rank_items(user, items, mask, K);
    const auto ref = rank_oracle(c.scores, c.mask, K);
    out.same_ranking = out.same_ranking && top == ref;
    const double r = recall_at_k(top, c.test), g = ndcg_at_k(top, c.test, K), h = hit_ratio_at_k(top, c.test);
    out.max_diff = std::max({out.max_diff, std::abs(r - recall_oracle(ref, c.test)),
                             std::abs(g - ndcg_oracle(ref, c.test, K)), std::abs(h - hit_oracle(ref, c.test))});
    if (r < prev_recall || h < prev_hit || g < 0.0 || g > 1.0 + 1e-12) out.monotone = false;
    prev_recall = r;
    prev_hit = h;
  }
  return out;
}

// Upper critical value of the chi-square distribution at significance 0.001.
inline double chi2_critical_0001(Index dof) {
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::quantile(boost::math::complement(dist, 0.001));
}

}  // namespace testing_support
