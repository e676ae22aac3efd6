#pragma once

// Treatment-effect forests for the five variants. Each tree is grown on a
// subsample drawn without replacement; honest trees place splits with one
// half and keep the other half in the leaves. Predictions refit the variant's
// local model on the training rows weighted by leaf co-membership with the
// query point.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "hte/dgp.hpp"
#include "hte/errors.hpp"
#include "hte/nuisance.hpp"
#include "hte/parallel.hpp"
#include "hte/random.hpp"
#include "hte/split.hpp"
#include "hte/variant.hpp"

namespace hte {

/// leaf_normalized: each tree spreads unit mass uniformly over x's leaf, then
/// trees are averaged. co_occurrence: raw counts of shared leaves, normalized once.
enum class WeightScheme { leaf_normalized, co_occurrence };

struct HteForestConfig {
  Variant variant = Variant::mob;
  std::size_t n_trees = 500;
  std::size_t min_per_arm = 7;
  std::size_t mtry = 0;  // 0: p
  double subsample_fraction = 0.5;
  bool honest = false;
  std::optional<std::size_t> max_depth;
  std::uint64_t seed = 0;
  WeightScheme weights = WeightScheme::leaf_normalized;
  unsigned threads = 1;
  RegressionForestConfig nuisance{};

  std::size_t effective_mtry(std::size_t p) const { return mtry == 0 ? p : mtry; }

  void validate(std::size_t p) const {
    if (n_trees < 1) throw ArgumentError("n_trees must be >= 1");
    if (min_per_arm < 1) throw ArgumentError("min_per_arm must be >= 1");
    const std::size_t m = effective_mtry(p);
    if (m < 1 || m > p) throw ArgumentError("mtry must be in [1, p]");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
      throw ArgumentError("subsample_fraction must be in (0, 1]");
  }
};

/// Training data on the scale the variant models: y_model = y - m_hat,
/// w_model = w - pi_hat (zeros where the variant does not center). `arm` is
/// the original 0/1 treatment and drives the per-arm size rule.
struct ModelData {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd arm;
  Eigen::VectorXd y_model;
  Eigen::VectorXd w_model;

  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
};

inline ModelData make_model_data(const SimulatedSample& s, const NuisanceEstimates& nu) {
  if (nu.m_hat.size() != s.y.size() || nu.pi_hat.size() != s.w.size())
    throw ArgumentError("nuisance estimates do not match the sample size");
  return ModelData{s.X, s.y, s.w, s.y - nu.m_hat, s.w - nu.pi_hat};
}

struct TreeNode {
  std::int32_t var = -1;  // -1: leaf
  double cut = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::vector<std::uint32_t> rows;  // leaves: estimation rows

  bool is_leaf() const { return var < 0; }
};

struct FittedTree {
  std::vector<TreeNode> nodes;
  std::vector<std::uint32_t> build_rows;       // sorted
  std::vector<std::uint32_t> estimation_rows;  // sorted; equals build_rows when adaptive

  template <class Get>
  std::size_t leaf_of(Get&& x) const {
    std::size_t k = 0;
    while (!nodes[k].is_leaf())
      k = static_cast<std::size_t>(x(static_cast<std::size_t>(nodes[k].var)) <= nodes[k].cut ? nodes[k].left
                                                                                               : nodes[k].right);
    return k;
  }

  std::size_t leaf_of(std::span<const double> x) const {
    return leaf_of([&](std::size_t j) { return x[j]; });
  }

  std::size_t depth() const {
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    std::size_t d = 0;
    while (!stack.empty()) {
      auto [k, dk] = stack.back();
      stack.pop_back();
      d = std::max(d, dk);
      if (!nodes[k].is_leaf()) {
        stack.push_back({static_cast<std::size_t>(nodes[k].left), dk + 1});
        stack.push_back({static_cast<std::size_t>(nodes[k].right), dk + 1});
      }
    }
    return d;
  }

  std::size_t n_leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& t) { return t.is_leaf(); }));
  }
};

/// Split decision for one node: variable, cut, criterion value.
struct NodeSplit {
  std::size_t variable = 0;
  double cut = 0.0;
  double criterion = 0.0;
  std::vector<bool> left;
};

namespace detail {

inline std::vector<double> gather(const Eigen::VectorXd& v, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) out[k] = v[static_cast<Eigen::Index>(rows[k])];
  return out;
}

}  // namespace detail

/// Chooses the split for one node of build rows, or nullopt for a leaf.
/// Bivariate variants work with the treatment shifted by its value at the
/// node's first row: the column space of (1, w) is unchanged, so fits,
/// residuals and every split statistic are as for w itself, and any constant
/// offset of w (e.g. a known propensity) cancels exactly.
inline std::optional<NodeSplit> choose_split(const ModelData& data, std::span<const std::size_t> rows,
                                             Variant variant, std::size_t min_per_arm,
                                             std::span<const std::size_t> candidates) {
  const std::size_t n = rows.size();
  std::size_t treated = 0;
  for (std::size_t r : rows) treated += data.arm[static_cast<Eigen::Index>(r)] > 0.5 ? 1 : 0;
  if (treated < 2 * min_per_arm || n - treated < 2 * min_per_arm) return std::nullopt;

  const std::vector<double> y = detail::gather(data.y_model, rows);
  std::vector<double> w = detail::gather(data.w_model, rows);
  const std::vector<double> arm = detail::gather(data.arm, rows);

  ScoreMatrix scores;
  try {
    if (tau_only(variant)) {
      scores = node_scores(y, w, fit_node_tau(y, w), ScoreKind::cf);
    } else {
      const double pivot = w[0];
      for (double& v : w) v -= pivot;
      scores = node_scores(y, w, fit_node_lm(y, w), ScoreKind::mob);
    }
  } catch (const NoVariation&) {
    return std::nullopt;
  }

  Eigen::MatrixXd Xc(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t k = 0; k < candidates.size(); ++k)
    for (std::size_t i = 0; i < n; ++i)
      Xc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          data.X(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(candidates[k]));
  auto column = [&](std::size_t k) {
    return std::span<const double>(Xc.col(static_cast<Eigen::Index>(k)).data(), n);
  };

  if (variant == Variant::cf) {
    // Direct scan: every candidate by the pseudo-outcome CART criterion.
    const std::vector<double> w_raw = detail::gather(data.w_model, rows);
    std::optional<NodeSplit> best;
    try {
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        auto cut = best_cut(scores, column(k), CutCriterion::cf, min_per_arm, arm, w_raw);
        if (cut && (!best || cut->criterion > best->criterion))
          best = NodeSplit{candidates[k], cut->cut, cut->criterion, std::move(cut->left)};
      }
    } catch (const Degenerate&) {
      return std::nullopt;
    }
    return best;
  }

  std::vector<std::size_t> local(candidates.size());
  std::iota(local.begin(), local.end(), 0);
  VariableSelection sel = select_split_variable(scores, Xc, local);
  if (sel.no_signal) return std::nullopt;
  for (std::size_t k : sel.order) {
    auto cut = best_cut(scores, column(k), CutCriterion::mob, min_per_arm, arm);
    if (cut) return NodeSplit{candidates[k], cut->cut, cut->criterion, std::move(cut->left)};
  }
  return std::nullopt;
}

namespace detail {

/// Collapses internal nodes whose children lack estimation rows in either arm,
/// then compacts the node array.
inline void prune_honest(FittedTree& tree, const Eigen::VectorXd& arm) {
  auto& nodes = tree.nodes;
  std::vector<std::size_t> treated(nodes.size(), 0), total(nodes.size(), 0);
  auto feasible = [&](std::size_t k) { return treated[k] >= 1 && total[k] - treated[k] >= 1; };

  // post-order to fill counts and collapse
  std::vector<std::pair<std::size_t, bool>> stack{{0, false}};
  while (!stack.empty()) {
    auto [k, expanded] = stack.back();
    stack.pop_back();
    if (nodes[k].is_leaf()) {
      total[k] = nodes[k].rows.size();
      for (auto r : nodes[k].rows) treated[k] += arm[static_cast<Eigen::Index>(r)] > 0.5 ? 1 : 0;
      continue;
    }
    if (!expanded) {
      stack.push_back({k, true});
      stack.push_back({static_cast<std::size_t>(nodes[k].right), false});
      stack.push_back({static_cast<std::size_t>(nodes[k].left), false});
      continue;
    }
    const auto l = static_cast<std::size_t>(nodes[k].left), r = static_cast<std::size_t>(nodes[k].right);
    treated[k] = treated[l] + treated[r];
    total[k] = total[l] + total[r];
    if (!feasible(l) || !feasible(r)) {
      auto collect = [&](std::size_t root) {
        std::vector<std::uint32_t> out;
        std::vector<std::size_t> s{root};
        while (!s.empty()) {
          std::size_t c = s.back();
          s.pop_back();
          if (nodes[c].is_leaf()) out.insert(out.end(), nodes[c].rows.begin(), nodes[c].rows.end());
          else {
            s.push_back(static_cast<std::size_t>(nodes[c].left));
            s.push_back(static_cast<std::size_t>(nodes[c].right));
          }
        }
        return out;
      };
      std::vector<std::uint32_t> rows = collect(k);
      std::sort(rows.begin(), rows.end());
      nodes[k].var = -1;
      nodes[k].cut = 0.0;
      nodes[k].left = nodes[k].right = -1;
      nodes[k].rows = std::move(rows);
    }
  }

  std::vector<TreeNode> compact;
  std::vector<std::pair<std::size_t, std::int32_t>> queue{{0, -1}};  // (old index, parent in compact)
  for (std::size_t head = 0; head < queue.size(); ++head) {
    auto [old, parent] = queue[head];
    const auto idx = static_cast<std::int32_t>(compact.size());
    compact.push_back(nodes[old]);
    if (parent >= 0) {
      auto& p = compact[static_cast<std::size_t>(parent)];
      (p.left == -2 ? p.left : p.right) = idx;
    }
    auto& me = compact.back();
    if (!me.is_leaf()) {
      queue.push_back({static_cast<std::size_t>(me.left), idx});
      queue.push_back({static_cast<std::size_t>(me.right), idx});
      me.left = -2;  // placeholder, filled in order by children
      me.right = -3;
    }
  }
  // Children were enqueued left then right, so the first child filled is left.
  for (auto& nd : compact)
    if (!nd.is_leaf() && (nd.left < 0 || nd.right < 0)) throw std::logic_error("prune_honest: compaction failed");
  nodes = std::move(compact);
}

}  // namespace detail

/// Grows one tree on the given build rows and fills leaves with the
/// estimation rows. Only y_model/w_model at build rows are read.
inline FittedTree grow_tree_on_rows(const ModelData& data, const HteForestConfig& cfg,
                                    std::vector<std::uint32_t> build_rows, std::vector<std::uint32_t> estimation_rows,
                                    Rng& rng) {
  const std::size_t p = data.p();
  const std::size_t mtry = cfg.effective_mtry(p);
  std::sort(build_rows.begin(), build_rows.end());
  std::sort(estimation_rows.begin(), estimation_rows.end());
  const bool honest = build_rows != estimation_rows;

  FittedTree tree;
  tree.build_rows = build_rows;
  tree.estimation_rows = estimation_rows;
  tree.nodes.emplace_back();

  struct Work {
    std::size_t node;
    std::vector<std::size_t> rows;
    std::size_t depth;
  };
  std::vector<Work> stack;
  stack.push_back({0, std::vector<std::size_t>(build_rows.begin(), build_rows.end()), 0});
  std::vector<std::size_t> all_vars(p);
  std::iota(all_vars.begin(), all_vars.end(), 0);

  while (!stack.empty()) {
    Work cur = std::move(stack.back());
    stack.pop_back();
    std::optional<NodeSplit> split;
    if (!cfg.max_depth || cur.depth < *cfg.max_depth) {
      std::vector<std::size_t> candidates = all_vars;
      if (mtry < p) {
        candidates = rng.sample_without_replacement(p, mtry);
        std::sort(candidates.begin(), candidates.end());
      }
      split = choose_split(data, cur.rows, cfg.variant, cfg.min_per_arm, candidates);
    }
    if (!split) {
      if (!honest) tree.nodes[cur.node].rows.assign(cur.rows.begin(), cur.rows.end());
      continue;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t i = 0; i < cur.rows.size(); ++i) (split->left[i] ? left : right).push_back(cur.rows[i]);
    const std::size_t li = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& node = tree.nodes[cur.node];
    node.var = static_cast<std::int32_t>(split->variable);
    node.cut = split->cut;
    node.left = static_cast<std::int32_t>(li);
    node.right = static_cast<std::int32_t>(li + 1);
    stack.push_back({li + 1, std::move(right), cur.depth + 1});
    stack.push_back({li, std::move(left), cur.depth + 1});
  }

  if (honest) {
    for (auto r : estimation_rows) {
      const auto i = static_cast<Eigen::Index>(r);
      std::size_t leaf = tree.leaf_of([&](std::size_t j) { return data.X(i, static_cast<Eigen::Index>(j)); });
      tree.nodes[leaf].rows.push_back(r);
    }
    detail::prune_honest(tree, data.arm);
  }
  return tree;
}

/// Subsample of ceil(fraction * n) rows; honest trees use the first half
/// (floor) of the shuffled subsample for splits and the rest for estimation.
inline FittedTree grow_tree(const ModelData& data, const HteForestConfig& cfg, std::uint64_t tree_seed) {
  const std::size_t n = data.n();
  Rng rng(tree_seed);
  const auto sub_n = std::max<std::size_t>(
      1, std::min(n, static_cast<std::size_t>(std::ceil(cfg.subsample_fraction * static_cast<double>(n)))));
  std::vector<std::size_t> sub = rng.sample_without_replacement(n, sub_n);
  std::vector<std::uint32_t> build, est;
  if (cfg.honest) {
    const std::size_t half = sub_n / 2;
    build.assign(sub.begin(), sub.begin() + static_cast<std::ptrdiff_t>(half));
    est.assign(sub.begin() + static_cast<std::ptrdiff_t>(half), sub.end());
  } else {
    build.assign(sub.begin(), sub.end());
    est = build;
  }
  return grow_tree_on_rows(data, cfg, std::move(build), std::move(est), rng);
}

inline FittedTree grow_tree(const SimulatedSample& sample, const NuisanceEstimates& nuisance,
                            const HteForestConfig& cfg, std::uint64_t tree_seed) {
  cfg.validate(sample.p());
  return grow_tree(make_model_data(sample, nuisance), cfg, tree_seed);
}

struct ForestWeights {
  std::vector<std::uint32_t> index;  // ascending
  std::vector<double> alpha;
  std::size_t trees_used = 0;

  double sum() const { return std::accumulate(alpha.begin(), alpha.end(), 0.0); }

  double at(std::size_t i) const {
    auto it = std::lower_bound(index.begin(), index.end(), static_cast<std::uint32_t>(i));
    return it != index.end() && *it == i ? alpha[static_cast<std::size_t>(it - index.begin())] : 0.0;
  }
};

struct TauPrediction {
  double tau = 0.0;
  std::optional<double> mu;  // intercept for bivariate variants
};

class HteForest {
 public:
  HteForest() = default;
  HteForest(HteForestConfig cfg, ModelData data, NuisanceEstimates nuisance, std::vector<FittedTree> trees)
      : cfg_(std::move(cfg)), data_(std::move(data)), nuisance_(std::move(nuisance)), trees_(std::move(trees)) {}

  const HteForestConfig& config() const { return cfg_; }
  const ModelData& data() const { return data_; }
  const NuisanceEstimates& nuisance() const { return nuisance_; }
  const std::vector<FittedTree>& trees() const { return trees_; }

  ForestWeights weights(std::span<const double> x) const {
    if (x.size() != data_.p()) throw ArgumentError("forest_weights: query has wrong dimension");
    std::vector<double> acc(data_.n(), 0.0);
    std::vector<std::uint32_t> touched;
    ForestWeights out;
    double total = 0.0;
    for (const auto& t : trees_) {
      const auto& rows = t.nodes[t.leaf_of(x)].rows;
      if (rows.empty()) continue;
      ++out.trees_used;
      const double mass = cfg_.weights == WeightScheme::leaf_normalized ? 1.0 / static_cast<double>(rows.size()) : 1.0;
      for (auto r : rows) {
        if (acc[r] == 0.0) touched.push_back(r);
        acc[r] += mass;
      }
      total += mass * static_cast<double>(rows.size());
    }
    if (out.trees_used == 0) throw EmptyNeighborhood();
    std::sort(touched.begin(), touched.end());
    out.index = std::move(touched);
    out.alpha.reserve(out.index.size());
    const double norm = cfg_.weights == WeightScheme::leaf_normalized ? static_cast<double>(out.trees_used) : total;
    for (auto r : out.index) out.alpha.push_back(acc[r] / norm);
    return out;
  }

  TauPrediction predict(std::span<const double> x) const { return estimate(weights(x)); }

  /// Weighted refit of the variant's local model.
  ///   tau-only variants: sum a (y~ w~) / sum a w~^2
  ///   bivariate variants: weighted least squares of y~ on (1, w~)
  TauPrediction estimate(const ForestWeights& fw) const {
    const auto& y = data_.y_model;
    const auto& w = data_.w_model;
    TauPrediction out;
    if (tau_only(cfg_.variant)) {
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < fw.index.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(fw.index[k]);
        num += fw.alpha[k] * y[i] * w[i];
        den += fw.alpha[k] * w[i] * w[i];
      }
      if (den < kVariationTolerance) throw Degenerate("predict_tau: weighted treatment variation is zero");
      out.tau = num / den;
      return out;
    }
    const double pivot = w[static_cast<Eigen::Index>(fw.index.front())];
    double sa = 0.0, sy = 0.0, sd = 0.0, sw = 0.0;
    for (std::size_t k = 0; k < fw.index.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(fw.index[k]);
      sa += fw.alpha[k];
      sy += fw.alpha[k] * y[i];
      sd += fw.alpha[k] * (w[i] - pivot);
      sw += fw.alpha[k] * w[i];
    }
    const double ybar = sy / sa, dbar = sd / sa;
    double sdd = 0.0, syd = 0.0;
    for (std::size_t k = 0; k < fw.index.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(fw.index[k]);
      const double dd = (w[i] - pivot) - dbar;
      sdd += fw.alpha[k] * dd * dd;
      syd += fw.alpha[k] * (y[i] - ybar) * dd;
    }
    if (sdd / sa < kVariationTolerance) throw Degenerate("predict_tau: weighted treatment variation is zero");
    out.tau = syd / sdd;
    out.mu = ybar - out.tau * (sw / sa);
    return out;
  }

  Eigen::VectorXd predict_tau(const Eigen::MatrixXd& Xq, unsigned threads = 1) const {
    Eigen::VectorXd out(Xq.rows());
    parallel_for(static_cast<std::size_t>(Xq.rows()), resolve_threads(threads), [&](std::size_t i) {
      std::vector<double> x(data_.p());
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = Xq(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      out[static_cast<Eigen::Index>(i)] = predict(x).tau;
    });
    return out;
  }

 private:
  HteForestConfig cfg_;
  ModelData data_;
  NuisanceEstimates nuisance_;
  std::vector<FittedTree> trees_;
};

inline ForestWeights forest_weights(const HteForest& forest, std::span<const double> x) { return forest.weights(x); }
inline TauPrediction predict_tau(const HteForest& forest, std::span<const double> x) { return forest.predict(x); }

/// Fits with precomputed nuisance estimates. Tree t uses seed
/// derive_seed(cfg.seed, Stream::tree, t); results do not depend on threads.
inline HteForest fit_hte_forest(const SimulatedSample& sample, const HteForestConfig& cfg, NuisanceEstimates nuisance) {
  cfg.validate(sample.p());
  if (sample.n() < 4 * cfg.min_per_arm) throw ArgumentError("fit_hte_forest: need n >= 4 * min_per_arm");
  ModelData data = make_model_data(sample, nuisance);
  std::vector<FittedTree> trees(cfg.n_trees);
  parallel_for(cfg.n_trees, resolve_threads(cfg.threads),
               [&](std::size_t t) { trees[t] = grow_tree(data, cfg, derive_seed(cfg.seed, Stream::tree, t)); });
  return HteForest(cfg, std::move(data), std::move(nuisance), std::move(trees));
}

/// Computes the variant's nuisance estimates (seeded from cfg.seed) and fits.
inline HteForest fit_hte_forest(const SimulatedSample& sample, const HteForestConfig& cfg,
                                std::optional<double> pi_known = std::nullopt) {
  cfg.validate(sample.p());
  RegressionForestConfig ncfg = cfg.nuisance;
  ncfg.threads = cfg.threads;
  return fit_hte_forest(sample, cfg, compute_centering(sample, cfg.variant, pi_known, ncfg, cfg.seed));
}

}  // namespace hte
