#pragma once

// Node-level model fits, per-observation scores, split-variable selection by
// a permutation-type quadratic test, and exhaustive cut-point search under the
// model-based criterion (quadratic form in the left-child score sum) and the
// causal-forest criterion (CART on pseudo-outcomes).

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "hte/errors.hpp"
#include "hte/linalg.hpp"

namespace hte {

inline constexpr double kVariationTolerance = 1e-12;

struct NodeFit {
  double mu_hat = 0.0;
  double tau_hat = 0.0;
  std::size_t n_node = 0;
  std::size_t n_treated = 0;  // rows with w > 0 (binary or centered treatment)
  std::size_t n_control = 0;
};

/// Fit with K-1 treatment contrasts against a reference arm.
struct MultiArmFit {
  double mu_hat = 0.0;
  Eigen::VectorXd tau_hat;
  std::size_t n_node = 0;
};

enum class ScoreKind { cf, mob, multiarm };

struct ScoreMatrix {
  Eigen::MatrixXd psi;  // n x q
  ScoreKind kind = ScoreKind::mob;

  Eigen::Index n() const { return psi.rows(); }
  Eigen::Index q() const { return psi.cols(); }
  /// Column holding the treatment-effect score (the last one).
  Eigen::Index tau_column() const { return psi.cols() - 1; }
};

namespace detail {

inline void count_arms(std::span<const double> w, NodeFit& f) {
  f.n_node = w.size();
  f.n_treated = static_cast<std::size_t>(std::count_if(w.begin(), w.end(), [](double v) { return v > 0.0; }));
  f.n_control = f.n_node - f.n_treated;
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Least squares of y on (1, w): tau = cov(y, w) / var(w), mu = mean(y) - tau mean(w).
inline NodeFit fit_node_lm(std::span<const double> y, std::span<const double> w) {
  if (y.size() != w.size()) throw ArgumentError("fit_node_lm: y and w differ in length");
  if (y.size() < 2) throw ArgumentError("fit_node_lm: node needs at least 2 rows");
  const double ybar = detail::mean(y);
  const double wbar = detail::mean(w);
  double sww = 0.0, syw = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double dw = w[i] - wbar;
    sww += dw * dw;
    syw += (y[i] - ybar) * dw;
  }
  if (sww / static_cast<double>(y.size()) <= kVariationTolerance) throw NoVariation();
  NodeFit f;
  f.tau_hat = syw / sww;
  f.mu_hat = ybar - f.tau_hat * wbar;
  detail::count_arms(w, f);
  return f;
}

/// Solves sum (y - tau w) w = 0 for centered y, w (no intercept).
inline NodeFit fit_node_tau(std::span<const double> y, std::span<const double> w) {
  if (y.size() != w.size()) throw ArgumentError("fit_node_tau: y and w differ in length");
  if (y.empty()) throw ArgumentError("fit_node_tau: empty node");
  double sww = 0.0, syw = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sww += w[i] * w[i];
    syw += y[i] * w[i];
  }
  if (sww / static_cast<double>(y.size()) <= kVariationTolerance) throw NoVariation();
  NodeFit f;
  f.tau_hat = syw / sww;
  detail::count_arms(w, f);
  return f;
}

/// Least squares of y on (1, W) where W holds K-1 contrast columns.
inline MultiArmFit fit_node_lm_multiarm(std::span<const double> y, const Eigen::MatrixXd& W) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (W.rows() != n) throw ArgumentError("fit_node_lm_multiarm: row mismatch");
  if (n < W.cols() + 1) throw ArgumentError("fit_node_lm_multiarm: too few rows");
  Eigen::MatrixXd D(n, W.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(W.cols()) = W;
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  qr.setThreshold(1e-10);
  if (qr.rank() < D.cols()) throw NoVariation();
  Eigen::VectorXd beta = qr.solve(yv);
  MultiArmFit f;
  f.mu_hat = beta[0];
  f.tau_hat = beta.tail(W.cols());
  f.n_node = y.size();
  return f;
}

/// mob: psi_i = (y_i - mu - tau w_i) (1, w_i); cf: psi_i = (y_i - tau w_i) w_i.
inline ScoreMatrix node_scores(std::span<const double> y, std::span<const double> w, const NodeFit& fit,
                               ScoreKind kind) {
  if (y.size() != w.size()) throw ArgumentError("node_scores: y and w differ in length");
  const auto n = static_cast<Eigen::Index>(y.size());
  ScoreMatrix s;
  s.kind = kind;
  switch (kind) {
    case ScoreKind::mob:
      s.psi.resize(n, 2);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = y[i] - fit.mu_hat - fit.tau_hat * w[i];
        s.psi(i, 0) = r;
        s.psi(i, 1) = r * w[i];
      }
      break;
    case ScoreKind::cf:
      s.psi.resize(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) s.psi(i, 0) = (y[i] - fit.tau_hat * w[i]) * w[i];
      break;
    case ScoreKind::multiarm:
      throw ArgumentError("node_scores: use node_scores_multiarm for multi-arm fits");
  }
  return s;
}

/// psi_i = residual_i (1, W_i1, ..., W_i,K-1).
inline ScoreMatrix node_scores_multiarm(std::span<const double> y, const Eigen::MatrixXd& W, const MultiArmFit& fit) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (W.rows() != n) throw ArgumentError("node_scores_multiarm: row mismatch");
  ScoreMatrix s;
  s.kind = ScoreKind::multiarm;
  s.psi.resize(n, W.cols() + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = y[i] - fit.mu_hat - W.row(i).dot(fit.tau_hat);
    s.psi(i, 0) = r;
    s.psi.row(i).tail(W.cols()) = r * W.row(i);
  }
  return s;
}

/// Max over coordinates of |central-difference gradient of the summed loss -
/// (-column sums of psi)|. kind selects the mob loss (mu, tau) or the cf loss (tau).
inline double finite_diff_check(std::span<const double> y, std::span<const double> w, const NodeFit& fit,
                                double epsilon, ScoreKind kind = ScoreKind::mob) {
  if (!(epsilon >= 1e-8 && epsilon <= 1e-3)) throw ArgumentError("finite_diff_check: epsilon outside [1e-8, 1e-3]");
  auto loss = [&](double mu, double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double r = y[i] - mu - tau * w[i];
      s += 0.5 * r * r;
    }
    return s;
  };
  const ScoreMatrix scores = node_scores(y, w, fit, kind);
  const Eigen::VectorXd sums = scores.psi.colwise().sum();
  const double mu = kind == ScoreKind::cf ? 0.0 : fit.mu_hat;
  const double g_tau = (loss(mu, fit.tau_hat + epsilon) - loss(mu, fit.tau_hat - epsilon)) / (2.0 * epsilon);
  double dev = std::abs(g_tau + sums[scores.tau_column()]);
  if (kind == ScoreKind::mob) {
    const double g_mu = (loss(mu + epsilon, fit.tau_hat) - loss(mu - epsilon, fit.tau_hat)) / (2.0 * epsilon);
    dev = std::max(dev, std::abs(g_mu + sums[0]));
  }
  return dev;
}

// ---------------------------------------------------------------------------
// Split-variable selection

struct VariableSelection {
  bool no_signal = false;              // scores carry no variation; stop splitting
  std::optional<std::size_t> variable; // selected covariate (entry of candidates)
  std::vector<double> statistic;       // quadratic statistic per candidate (0 if constant)
  std::vector<double> p_value;         // chi-square p-value per candidate
  std::vector<std::size_t> order;      // candidates from most to least preferred
  Eigen::Index df = 0;                 // rank of the score covariance
};

/// Linear statistic T_j = sum_i x_ij psi_i standardized by its conditional
/// (permutation) expectation and covariance (Strasser-Weber), quadratic form
/// c_j = (T_j - E_j)' Cov_j^+ (T_j - E_j), p-value from chi-square(df = rank).
/// All non-constant candidates share df = rank(V_h), so ordering by p-value is
/// ordering by c_j; ties go to the smaller covariate index.
inline VariableSelection select_split_variable(const ScoreMatrix& scores, const Eigen::MatrixXd& X_node,
                                               std::span<const std::size_t> candidates) {
  const Eigen::Index n = scores.n();
  if (n < 3) throw ArgumentError("select_split_variable: node needs at least 3 rows");
  if (X_node.rows() != n) throw ArgumentError("select_split_variable: X_node rows differ from scores");
  if (candidates.empty()) throw ArgumentError("select_split_variable: no candidate variables");

  VariableSelection out;
  const Eigen::RowVectorXd mu_h = scores.psi.colwise().mean();
  const Eigen::MatrixXd Hc = scores.psi.rowwise() - mu_h;
  const Eigen::MatrixXd Vh = (Hc.transpose() * Hc) / static_cast<double>(n);
  const PseudoInverse pinv = pseudo_inverse_sym(Vh);
  out.df = pinv.rank;
  if (pinv.rank == 0) {
    out.no_signal = true;
    return out;
  }

  const std::size_t m = candidates.size();
  out.statistic.assign(m, 0.0);
  out.p_value.assign(m, 1.0);
  std::vector<bool> constant(m, false);
  Eigen::VectorXd xc(n);
  const double dn = static_cast<double>(n);
  for (std::size_t k = 0; k < m; ++k) {
    const auto j = static_cast<Eigen::Index>(candidates[k]);
    if (j >= X_node.cols()) throw ArgumentError("select_split_variable: candidate index out of range");
    const auto col = X_node.col(j);
    const double lo = col.minCoeff(), hi = col.maxCoeff();
    if (!(hi > lo)) {
      constant[k] = true;
      continue;
    }
    xc = col.array() - col.mean();
    const double sxx = xc.squaredNorm();
    const Eigen::VectorXd t = Hc.transpose() * xc;  // T - E
    const double c = t.dot(pinv.pinv * t) * (dn - 1.0) / (dn * sxx);
    out.statistic[k] = std::max(c, 0.0);
    out.p_value[k] = boost::math::gamma_q(0.5 * static_cast<double>(pinv.rank), 0.5 * out.statistic[k]);
  }

  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (constant[a] != constant[b]) return !constant[a];
    if (out.statistic[a] != out.statistic[b]) return out.statistic[a] > out.statistic[b];
    return candidates[a] < candidates[b];
  });
  out.order.reserve(m);
  for (std::size_t k : idx) out.order.push_back(candidates[k]);
  out.variable = out.order.front();
  return out;
}

// ---------------------------------------------------------------------------
// Cut-point criteria

enum class CutCriterion { mob, cf };

/// Z' V Z with Z = sum_L psi - n_L mean(psi), V = ((n n_L - n_L^2)/(n-1) Vh)^+,
/// Vh = (1/n) sum psi psi'.
inline double cut_criterion_mob(const ScoreMatrix& scores, const std::vector<bool>& left) {
  const Eigen::Index n = scores.n();
  if (static_cast<Eigen::Index>(left.size()) != n) throw ArgumentError("cut_criterion_mob: membership length");
  Eigen::VectorXd sum_left = Eigen::VectorXd::Zero(scores.q());
  Eigen::Index n_left = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (left[static_cast<std::size_t>(i)]) {
      sum_left += scores.psi.row(i).transpose();
      ++n_left;
    }
  if (n_left == 0 || n_left == n) throw ArgumentError("cut_criterion_mob: both children must be non-empty");
  const double dn = static_cast<double>(n), dl = static_cast<double>(n_left);
  const Eigen::VectorXd mean = scores.psi.colwise().mean().transpose();
  const Eigen::MatrixXd Vh = scores.psi.transpose() * scores.psi / dn;
  const Eigen::VectorXd z = sum_left - dl * mean;
  const PseudoInverse P = pseudo_inverse_sym(((dn * dl - dl * dl) / (dn - 1.0)) * Vh);
  return z.dot(P.pinv * z);
}

/// (n_L n_R / n^2) (mean_L rho - mean_R rho)^2 with rho = psi_tau / A_p,
/// A_p = (1/n) sum w_i^2 over the centered treatment.
inline double cut_criterion_cf(std::span<const double> psi_tau, std::span<const double> w_centered,
                               const std::vector<bool>& left) {
  const std::size_t n = psi_tau.size();
  if (w_centered.size() != n || left.size() != n) throw ArgumentError("cut_criterion_cf: length mismatch");
  double ap = 0.0;
  for (double w : w_centered) ap += w * w;
  ap /= static_cast<double>(n);
  if (ap <= kVariationTolerance) throw Degenerate("cut_criterion_cf: A_p is numerically zero");
  double sl = 0.0, sr = 0.0;
  std::size_t nl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (left[i]) {
      sl += psi_tau[i];
      ++nl;
    } else {
      sr += psi_tau[i];
    }
  }
  const std::size_t nr = n - nl;
  if (nl == 0 || nr == 0) throw ArgumentError("cut_criterion_cf: both children must be non-empty");
  const double diff = (sl / static_cast<double>(nl) - sr / static_cast<double>(nr)) / ap;
  return static_cast<double>(nl) * static_cast<double>(nr) / (static_cast<double>(n) * static_cast<double>(n)) * diff * diff;
}

struct CutResult {
  double cut = 0.0;        // left child: x <= cut
  double criterion = 0.0;
  std::size_t n_left = 0;
  std::vector<bool> left;  // membership in node row order
};

/// Exhaustive scan over midpoints between consecutive distinct values of xj.
/// A cut is feasible when each child holds at least min_per_arm rows of each
/// arm (arm[i] is the original 0/1 treatment). Returns the feasible cut with
/// the largest strictly positive criterion, smallest cut on ties. For the cf
/// criterion w_centered supplies A_p; the tau column of `scores` is used.
inline std::optional<CutResult> best_cut(const ScoreMatrix& scores, std::span<const double> xj, CutCriterion criterion,
                                         std::size_t min_per_arm, std::span<const double> arm,
                                         std::span<const double> w_centered = {}) {
  const std::size_t n = xj.size();
  if (static_cast<std::size_t>(scores.n()) != n || arm.size() != n)
    throw ArgumentError("best_cut: length mismatch");
  if (n < 2) return std::nullopt;
  const std::size_t q = static_cast<std::size_t>(scores.q());
  const double dn = static_cast<double>(n);

  std::size_t treated_total = 0;
  for (double a : arm) treated_total += a > 0.5 ? 1 : 0;
  const std::size_t control_total = n - treated_total;
  if (treated_total < 2 * min_per_arm || control_total < 2 * min_per_arm) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xj[a] < xj[b]; });
  if (!(xj[order.back()] > xj[order.front()])) return std::nullopt;

  // Criterion-specific constants.
  std::vector<double> total(q, 0.0), mean(q, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < q; ++c) total[c] += scores.psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
  for (std::size_t c = 0; c < q; ++c) mean[c] = total[c] / dn;
  Eigen::MatrixXd vh_pinv;
  double ap = 0.0;
  const std::size_t tc = q - 1;
  if (criterion == CutCriterion::mob) {
    vh_pinv = pseudo_inverse_sym(scores.psi.transpose() * scores.psi / dn).pinv;
  } else {
    if (w_centered.size() != n) throw ArgumentError("best_cut: cf criterion needs the centered treatment");
    for (double w : w_centered) ap += w * w;
    ap /= dn;
    if (ap <= kVariationTolerance) throw Degenerate("best_cut: A_p is numerically zero");
  }

  std::vector<double> sum_left(q, 0.0), z(q, 0.0);
  std::size_t treated_left = 0;
  std::optional<CutResult> best;
  double best_value = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const std::size_t i = order[k];
    for (std::size_t c = 0; c < q; ++c) sum_left[c] += scores.psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    treated_left += arm[i] > 0.5 ? 1 : 0;
    const double x_here = xj[i], x_next = xj[order[k + 1]];
    if (!(x_next > x_here)) continue;
    const std::size_t nl = k + 1, nr = n - nl;
    const std::size_t control_left = nl - treated_left;
    if (treated_left < min_per_arm || control_left < min_per_arm) continue;
    if (treated_total - treated_left < min_per_arm || control_total - control_left < min_per_arm) continue;

    const double dl = static_cast<double>(nl), dr = static_cast<double>(nr);
    double value;
    if (criterion == CutCriterion::mob) {
      for (std::size_t c = 0; c < q; ++c) z[c] = sum_left[c] - dl * mean[c];
      double quad = 0.0;
      for (std::size_t a = 0; a < q; ++a)
        for (std::size_t b = 0; b < q; ++b)
          quad += z[a] * vh_pinv(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * z[b];
      value = quad * (dn - 1.0) / (dn * dl - dl * dl);
    } else {
      const double diff = (sum_left[tc] / dl - (total[tc] - sum_left[tc]) / dr) / ap;
      value = dl * dr / (dn * dn) * diff * diff;
    }
    if (value > best_value) {
      best_value = value;
      const double mid = 0.5 * (x_here + x_next);
      best = CutResult{mid < x_next ? mid : x_here, value, nl, {}};
    }
  }
  if (best) {
    best->left.resize(n);
    for (std::size_t i = 0; i < n; ++i) best->left[i] = xj[i] <= best->cut;
  }
  return best;
}

}  // namespace hte
