#pragma once

// Variance-reduction CART ensemble used for the nuisance fits m(x) = E(Y|X)
// and pi(x) = E(W|X). Trees are grown on subsamples drawn without replacement
// and record their subsample so that training rows can be predicted out-of-bag.

#include <concepts>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "hte/errors.hpp"
#include "hte/parallel.hpp"
#include "hte/random.hpp"

namespace hte {

struct RegressionForestConfig {
  std::size_t n_trees = 500;
  std::size_t min_node = 5;
  std::size_t mtry = 0;  // 0: ceil(sqrt(p))
  double subsample_fraction = 0.5;
  bool honest = false;
  unsigned threads = 1;

  std::size_t effective_mtry(std::size_t p) const {
    if (mtry > 0) return mtry;
    return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));
  }

  void validate(std::size_t p) const {
    if (n_trees < 1) throw ArgumentError("n_trees must be >= 1");
    if (min_node < 1) throw ArgumentError("min_node must be >= 1");
    const std::size_t m = effective_mtry(p);
    if (m < 1 || m > p) throw ArgumentError("mtry must be in [1, p]");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
      throw ArgumentError("subsample_fraction must be in (0, 1]");
  }
};

class RegressionTree {
 public:
  struct Node {
    std::int32_t var = -1;  // -1 marks a leaf
    double cut = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0.0;
  };

  template <class Get>
  double predict(Get&& x) const {
    std::size_t k = 0;
    while (nodes_[k].var >= 0) k = x(static_cast<std::size_t>(nodes_[k].var)) <= nodes_[k].cut ? nodes_[k].left : nodes_[k].right;
    return nodes_[k].value;
  }

  double predict_row(const Eigen::MatrixXd& X, Eigen::Index i) const {
    return predict([&](std::size_t j) { return X(i, static_cast<Eigen::Index>(j)); });
  }

  /// Sorted indices of every training row the tree used (build and estimation).
  const std::vector<std::uint32_t>& in_bag() const { return in_bag_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  bool contains(std::size_t row) const {
    return std::binary_search(in_bag_.begin(), in_bag_.end(), static_cast<std::uint32_t>(row));
  }

  static RegressionTree grow(const Eigen::MatrixXd& X, std::span<const double> target,
                             const RegressionForestConfig& cfg, std::uint64_t seed);

 private:
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> in_bag_;
};

namespace detail {

struct CartSplit {
  std::int32_t var = -1;
  double cut = 0.0;
  double gain = 0.0;
};

inline CartSplit best_cart_split(const Eigen::MatrixXd& X, std::span<const double> target,
                                 std::span<const std::size_t> rows, std::span<const std::size_t> candidates,
                                 std::size_t min_node) {
  CartSplit best;
  const std::size_t n = rows.size();
  double mean = 0.0;
  for (std::size_t r : rows) mean += target[r];
  mean /= static_cast<double>(n);

  std::vector<std::pair<double, double>> xy(n);
  for (std::size_t j : candidates) {
    for (std::size_t k = 0; k < n; ++k)
      xy[k] = {X(static_cast<Eigen::Index>(rows[k]), static_cast<Eigen::Index>(j)), target[rows[k]] - mean};
    std::sort(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double total = 0.0;
    for (const auto& e : xy) total += e.second;
    double left = 0.0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      left += xy[k].second;
      const std::size_t nl = k + 1, nr = n - nl;
      if (xy[k].first == xy[k + 1].first) continue;
      if (nl < min_node || nr < min_node) continue;
      const double right = total - left;
      const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) -
                          total * total / static_cast<double>(n);
      if (gain > best.gain) {
        best.gain = gain;
        best.var = static_cast<std::int32_t>(j);
        double mid = 0.5 * (xy[k].first + xy[k + 1].first);
        best.cut = mid < xy[k + 1].first ? mid : xy[k].first;
      }
    }
  }
  return best;
}

}  // namespace detail

inline RegressionTree RegressionTree::grow(const Eigen::MatrixXd& X, std::span<const double> target,
                                           const RegressionForestConfig& cfg, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(X.rows());
  const std::size_t p = static_cast<std::size_t>(X.cols());
  const std::size_t mtry = cfg.effective_mtry(p);
  Rng rng(seed);

  const auto sub_n = std::max<std::size_t>(
      1, std::min(n, static_cast<std::size_t>(std::ceil(cfg.subsample_fraction * static_cast<double>(n)))));
  std::vector<std::size_t> subsample = rng.sample_without_replacement(n, sub_n);

  std::vector<std::size_t> build_rows, est_rows;
  if (cfg.honest && sub_n >= 2) {
    build_rows.assign(subsample.begin(), subsample.begin() + static_cast<std::ptrdiff_t>(sub_n / 2));
    est_rows.assign(subsample.begin() + static_cast<std::ptrdiff_t>(sub_n / 2), subsample.end());
  } else {
    build_rows = subsample;
  }

  RegressionTree tree;
  tree.in_bag_.assign(subsample.begin(), subsample.end());
  std::sort(tree.in_bag_.begin(), tree.in_bag_.end());

  struct Pending {
    std::size_t node;
    std::vector<std::size_t> rows;
  };
  std::vector<Pending> stack;
  tree.nodes_.emplace_back();
  stack.push_back({0, build_rows});
  std::vector<double> build_means(1, 0.0);
  std::vector<std::int32_t> parent(1, -1);

  while (!stack.empty()) {
    Pending cur = std::move(stack.back());
    stack.pop_back();
    const auto& rows = cur.rows;
    double sum = 0.0, lo = target[rows[0]], hi = target[rows[0]];
    for (std::size_t r : rows) {
      sum += target[r];
      lo = std::min(lo, target[r]);
      hi = std::max(hi, target[r]);
    }
    const double mean = sum / static_cast<double>(rows.size());
    build_means[cur.node] = mean;
    tree.nodes_[cur.node].value = mean;
    if (rows.size() < 2 * cfg.min_node) continue;
    if (hi - lo <= 1e-12 * std::max(1.0, std::abs(mean))) continue;

    std::vector<std::size_t> candidates = rng.sample_without_replacement(p, mtry);
    std::sort(candidates.begin(), candidates.end());
    detail::CartSplit split = detail::best_cart_split(X, target, rows, candidates, cfg.min_node);
    if (split.var < 0) continue;

    std::vector<std::size_t> left, right;
    for (std::size_t r : rows)
      (X(static_cast<Eigen::Index>(r), split.var) <= split.cut ? left : right).push_back(r);
    const auto li = tree.nodes_.size();
    tree.nodes_.emplace_back();
    tree.nodes_.emplace_back();
    build_means.resize(tree.nodes_.size(), 0.0);
    parent.resize(tree.nodes_.size(), static_cast<std::int32_t>(cur.node));
    auto& node = tree.nodes_[cur.node];
    node.var = split.var;
    node.cut = split.cut;
    node.left = static_cast<std::int32_t>(li);
    node.right = static_cast<std::int32_t>(li + 1);
    stack.push_back({li + 1, std::move(right)});
    stack.push_back({li, std::move(left)});
  }

  if (!est_rows.empty()) {
    // Leaf values from the estimation half; empty leaves inherit from the
    // nearest ancestor that received estimation rows.
    std::vector<double> sums(tree.nodes_.size(), 0.0);
    std::vector<std::size_t> counts(tree.nodes_.size(), 0);
    for (std::size_t r : est_rows) {
      std::size_t k = 0;
      for (;;) {
        sums[k] += target[r];
        counts[k] += 1;
        if (tree.nodes_[k].var < 0) break;
        k = X(static_cast<Eigen::Index>(r), tree.nodes_[k].var) <= tree.nodes_[k].cut ? tree.nodes_[k].left
                                                                                        : tree.nodes_[k].right;
      }
    }
    for (std::size_t k = 0; k < tree.nodes_.size(); ++k) {
      if (tree.nodes_[k].var >= 0) continue;
      std::int32_t a = static_cast<std::int32_t>(k);
      while (a >= 0 && counts[static_cast<std::size_t>(a)] == 0) a = parent[static_cast<std::size_t>(a)];
      tree.nodes_[k].value = a >= 0 ? sums[static_cast<std::size_t>(a)] / static_cast<double>(counts[static_cast<std::size_t>(a)])
                                    : build_means[0];
    }
  }
  return tree;
}

struct OobPrediction {
  double value = 0.0;
  std::size_t n_trees = 0;  // trees whose subsample excludes the row
  bool fallback = false;    // no such tree: full-forest prediction used
};

class RegressionForest {
 public:
  RegressionForest() = default;
  explicit RegressionForest(std::vector<RegressionTree> trees) : trees_(std::move(trees)) {}

  const std::vector<RegressionTree>& trees() const { return trees_; }

  template <std::invocable<std::size_t> Get>
  double predict(Get&& x) const {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return s / static_cast<double>(trees_.size());
  }

  double predict(std::span<const double> x) const {
    return predict([&](std::size_t j) { return x[j]; });
  }

  /// Average over trees whose subsample does not contain `row` of X.
  OobPrediction oob_predict(const Eigen::MatrixXd& X, std::size_t row) const {
    if (row >= static_cast<std::size_t>(X.rows())) throw ArgumentError("oob_predict: row index out of range");
    const auto i = static_cast<Eigen::Index>(row);
    OobPrediction out;
    double s = 0.0;
    for (const auto& t : trees_) {
      if (t.contains(row)) continue;
      s += t.predict_row(X, i);
      ++out.n_trees;
    }
    if (out.n_trees == 0) {
      out.fallback = true;
      out.value = predict([&](std::size_t j) { return X(i, static_cast<Eigen::Index>(j)); });
    } else {
      out.value = s / static_cast<double>(out.n_trees);
    }
    return out;
  }

  std::vector<OobPrediction> oob_predict_all(const Eigen::MatrixXd& X) const {
    std::vector<OobPrediction> out(static_cast<std::size_t>(X.rows()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = oob_predict(X, i);
    return out;
  }

 private:
  std::vector<RegressionTree> trees_;
};

/// Trees use seeds derive_seed(seed, Stream::tree, t), so results do not
/// depend on cfg.threads.
inline RegressionForest fit_regression_forest(const Eigen::MatrixXd& X, std::span<const double> target,
                                              const RegressionForestConfig& cfg, std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(X.rows());
  if (target.size() != n) throw ArgumentError("fit_regression_forest: target length does not match X");
  cfg.validate(static_cast<std::size_t>(X.cols()));
  if (n < 2 * cfg.min_node) throw ArgumentError("fit_regression_forest: need n >= 2 * min_node");
  for (double v : target)
    if (!std::isfinite(v)) throw ArgumentError("fit_regression_forest: non-finite target");
  std::vector<RegressionTree> trees(cfg.n_trees);
  parallel_for(cfg.n_trees, resolve_threads(cfg.threads), [&](std::size_t t) {
    trees[t] = RegressionTree::grow(X, target, cfg, derive_seed(seed, Stream::tree, t));
  });
  return RegressionForest(std::move(trees));
}

}  // namespace hte
