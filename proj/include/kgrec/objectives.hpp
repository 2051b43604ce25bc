#pragma once

#include "kgrec/common.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <optional>

namespace kgrec {

struct LossWeights {
  double lambda1 = 1e-5;    // L2 on batch embeddings
  double lambda2 = 1e-2;    // soft distance correlation
  double lambda_cs = 0.1;   // cross-system contrastive
  double epsilon = 0.5;     // PCA keep ratio

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail("loss weights: epsilon ", epsilon, " not in [0, 1]");
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda_cs < 0.0) fail("loss weights must be non-negative");
  }
};

struct PairLoss {
  double value = 0.0;
  Vector d_pos;
  Vector d_neg;
};

// Sum over pairs of -ln sigmoid(pos - neg).
inline PairLoss bpr_loss(const Vector& pos, const Vector& neg) {
  if (pos.size() != neg.size()) fail("bpr_loss: ", pos.size(), " positive vs ", neg.size(), " negative scores");
  if (pos.size() < 1) fail("bpr_loss: empty batch");
  PairLoss out;
  out.d_pos.resize(pos.size());
  out.d_neg.resize(pos.size());
  for (Index k = 0; k < pos.size(); ++k) {
    const double diff = pos[k] - neg[k];
    out.value += neg_log_sigmoid(diff);
    const double g = -sigmoid(-diff);
    out.d_pos[k] = g;
    out.d_neg[k] = -g;
  }
  return out;
}

// 1/2 sum of squared norms over rows; the gradient is the rows themselves.
inline double l2_reg(const Matrix& rows) { return 0.5 * rows.squaredNorm(); }

struct PcaResult {
  Matrix basis;        // h x k, columns by descending eigenvalue
  Vector eigenvalues;  // k
  Matrix projected;    // N_p x k
  RowVec mean;
};

inline Index pca_components(Index hidden, Index n_rows, double epsilon) {
  const auto k = static_cast<Index>(std::floor(epsilon * static_cast<double>(hidden)));
  return std::min({std::max<Index>(1, k), hidden, n_rows});
}

inline Matrix pca_center(const Matrix& data) {
  const RowVec mean = data.colwise().mean();
  return data.rowwise() - mean;
}

// Top-k principal directions of the row-centred data. Each basis column is
// signed so that its largest-magnitude entry is positive.
inline PcaResult pca_project(const Matrix& data, double epsilon) {
  if (data.rows() < 2) fail("pca_project: need at least 2 rows, got ", data.rows());
  const Index h = data.cols();
  const Index k = pca_components(h, data.rows(), epsilon);
  PcaResult out;
  out.mean = data.colwise().mean();
  const Matrix centered = data.rowwise() - out.mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(data.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail("pca_project: eigendecomposition failed");
  out.basis.resize(h, k);
  out.eigenvalues.resize(k);
  for (Index c = 0; c < k; ++c) {
    const Index src = h - 1 - c;  // ascending order from the solver
    Vector col = solver.eigenvectors().col(src);
    Index arg = 0;
    for (Index r = 1; r < h; ++r) {
      if (std::abs(col[r]) > std::abs(col[arg])) arg = r;
    }
    if (col[arg] < 0.0) col = -col;
    out.basis.col(c) = col;
    out.eigenvalues[c] = solver.eigenvalues()[src];
  }
  out.projected = centered * out.basis;
  return out;
}

struct DcorrResult {
  double value = 0.0;
  RowVec d_x;
  RowVec d_y;
};

namespace detail {

// Double-centred |x_j - x_k| matrix.
inline Eigen::MatrixXd centered_distances(const RowVec& x) {
  const Index k = x.size();
  Eigen::MatrixXd a(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) a(i, j) = std::abs(x[i] - x[j]);
  }
  const Eigen::VectorXd row_mean = a.rowwise().mean();
  const Eigen::RowVectorXd col_mean = a.colwise().mean();
  const double grand = a.mean();
  a.colwise() -= row_mean;
  a.rowwise() -= col_mean;
  a.array() += grand;
  return a;
}

inline double sign(double v) { return (v > 0.0) - (v < 0.0); }

// d/dx_j of (1/k^2) sum_{ab} |x_a - x_b| W_ab for symmetric W.
inline RowVec distance_functional_grad(const RowVec& x, const Eigen::MatrixXd& W) {
  const Index k = x.size();
  RowVec g = RowVec::Zero(k);
  for (Index j = 0; j < k; ++j) {
    for (Index m = 0; m < k; ++m) g[j] += 2.0 * W(j, m) * sign(x[j] - x[m]);
  }
  return g / static_cast<double>(k * k);
}

}  // namespace detail

inline constexpr double kDvarFloor = 1e-12;

// Sample distance correlation treating the k coordinates of x and y as k
// paired scalar samples: sqrt(dCov^2) / sqrt(sqrt(dVar_x^2) sqrt(dVar_y^2)).
// Returns 0 (with zero gradient) when either distance variance is below 1e-12.
inline DcorrResult distance_correlation_grad(const RowVec& x, const RowVec& y) {
  if (x.size() != y.size()) fail("distance_correlation: length ", x.size(), " vs ", y.size());
  if (x.size() < 2) fail("distance_correlation: need at least 2 coordinates");
  const Index k = x.size();
  const double kk = static_cast<double>(k * k);
  DcorrResult out;
  out.d_x = RowVec::Zero(k);
  out.d_y = RowVec::Zero(k);
  const Eigen::MatrixXd A = detail::centered_distances(x);
  const Eigen::MatrixXd B = detail::centered_distances(y);
  const double vxy = (A.array() * B.array()).sum() / kk;
  const double vxx = A.squaredNorm() / kk;
  const double vyy = B.squaredNorm() / kk;
  const double dvar_x = std::sqrt(vxx);
  const double dvar_y = std::sqrt(vyy);
  if (dvar_x < kDvarFloor || dvar_y < kDvarFloor || !(vxy > 0.0)) return out;
  out.value = std::sqrt(vxy) / std::sqrt(dvar_x * dvar_y);
  // value = vxy^(1/2) vxx^(-1/4) vyy^(-1/4); the centring projection is
  // self-adjoint, so d vxy / d a = B / k^2 and d vxx / d a = 2 A / k^2.
  out.d_x = out.value * (0.5 / vxy * detail::distance_functional_grad(x, B) -
                         0.25 / vxx * detail::distance_functional_grad(x, 2.0 * A));
  out.d_y = out.value * (0.5 / vxy * detail::distance_functional_grad(y, A) -
                         0.25 / vyy * detail::distance_functional_grad(y, 2.0 * B));
  return out;
}

inline double distance_correlation(const RowVec& x, const RowVec& y) {
  return distance_correlation_grad(x, y).value;
}

struct SoftDcorrResult {
  double value = 0.0;
  Matrix d_pref;  // N_p x h
  Matrix basis;   // the projection actually used
};

// Sum of distance correlations over unordered row pairs after PCA. The basis
// is computed from `pref` unless a frozen one is supplied; either way it is
// a constant for the gradient.
inline SoftDcorrResult soft_dcorr_loss(const Matrix& pref, double epsilon,
                                       const std::optional<Matrix>& frozen_basis = std::nullopt) {
  if (pref.rows() < 2) fail("soft_dcorr_loss: need at least 2 preferences");
  SoftDcorrResult out;
  out.basis = frozen_basis ? *frozen_basis : pca_project(pref, epsilon).basis;
  if (out.basis.rows() != pref.cols()) fail("soft_dcorr_loss: basis has ", out.basis.rows(), " rows for h = ", pref.cols());
  const Matrix centered = pca_center(pref);
  const Matrix z = centered * out.basis;
  Matrix dz = Matrix::Zero(z.rows(), z.cols());
  for (Index p = 0; p < z.rows(); ++p) {
    for (Index q = p + 1; q < z.rows(); ++q) {
      const auto r = distance_correlation_grad(z.row(p), z.row(q));
      out.value += r.value;
      dz.row(p) += r.d_x;
      dz.row(q) += r.d_y;
    }
  }
  const Matrix d_centered = dz * out.basis.transpose();
  out.d_pref = d_centered.rowwise() - d_centered.colwise().mean();
  return out;
}

struct CrossSystemResult {
  double value = 0.0;
  Matrix d_user;  // batch x h
  Matrix d_pos;
  Matrix d_neg;
};

// Sum over triples of -ln s(u_K·(i+_C - i-_C)) - ln s(u_C·(i+_K - i-_K)).
// Content-side (C) embeddings are constants; gradients go to KMPN rows only.
inline CrossSystemResult cross_system_loss(const Matrix& kmpn_user, const Matrix& kmpn_pos, const Matrix& kmpn_neg,
                                           const Matrix& content_user, const Matrix& content_pos,
                                           const Matrix& content_neg) {
  const Index n = kmpn_user.rows();
  const Index h = kmpn_user.cols();
  for (const Matrix* m : {&kmpn_pos, &kmpn_neg, &content_user, &content_pos, &content_neg}) {
    if (m->rows() != n) fail("cross_system_loss: batch size mismatch");
    if (m->cols() != h) fail("cross_system_loss: dimension mismatch between systems (", m->cols(), " vs ", h, ")");
  }
  if (kmpn_pos.cols() != h || kmpn_neg.cols() != h) fail("cross_system_loss: dimension mismatch");
  CrossSystemResult out;
  out.d_user = Matrix::Zero(n, h);
  out.d_pos = Matrix::Zero(n, h);
  out.d_neg = Matrix::Zero(n, h);
  for (Index k = 0; k < n; ++k) {
    const RowVec content_gap = content_pos.row(k) - content_neg.row(k);
    const double a = kmpn_user.row(k).dot(content_gap);
    const double b = content_user.row(k).dot(kmpn_pos.row(k) - kmpn_neg.row(k));
    out.value += neg_log_sigmoid(a) + neg_log_sigmoid(b);
    out.d_user.row(k) = -sigmoid(-a) * content_gap;
    const double gb = -sigmoid(-b);
    out.d_pos.row(k) = gb * content_user.row(k);
    out.d_neg.row(k) = -gb * content_user.row(k);
  }
  return out;
}

struct ClickLoss {
  double value = 0.0;
  double d_pos = 0.0;
  Vector d_neg;
};

// -ln(exp(pos) / (exp(pos) + sum_k exp(neg_k))), max-shifted.
inline ClickLoss nrms_click_loss(double pos, const Vector& neg) {
  if (neg.size() < 1) fail("nrms_click_loss: need at least one negative");
  const double mx = std::max(pos, neg.maxCoeff());
  const double e_pos = std::exp(pos - mx);
  const Vector e_neg = (neg.array() - mx).exp().matrix();
  const double z = e_pos + e_neg.sum();
  ClickLoss out;
  // log(z) - (pos - mx), with log1p for the dominant-positive regime.
  out.value = std::log1p(e_neg.sum() / e_pos);
  if (!std::isfinite(out.value)) out.value = std::log(z) - (pos - mx);
  out.d_pos = e_pos / z - 1.0;
  out.d_neg = e_neg / z;
  return out;
}

enum class LossMode { kmpn, ckmpn };

struct LossParts {
  double bpr = 0.0;
  double l2 = 0.0;
  double dcorr = 0.0;
  std::optional<double> cs;
};

inline double total_loss(LossMode mode, const LossParts& parts, const LossWeights& w) {
  w.validate();
  double total = parts.bpr + w.lambda1 * parts.l2 + w.lambda2 * parts.dcorr;
  if (mode == LossMode::ckmpn) {
    if (!parts.cs) fail("total_loss: ckmpn mode requires content embeddings");
    total += w.lambda_cs * *parts.cs;
  }
  return total;
}

}  // namespace kgrec
