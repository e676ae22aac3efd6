#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "hte/forest.hpp"
#include "hte/split.hpp"
#include "oracle.hpp"

using namespace hte;

namespace {

struct Node {
  std::vector<double> y, w, arm;
  Eigen::MatrixXd X;
};

// Random node: binary arm, w = arm (optionally shifted), y linear in w with
// heterogeneity in x0.
Node random_node(Rng& rng, std::size_t n, std::size_t p, double shift = 0.0) {
  Node nd;
  nd.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) nd.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
    const double a = i % 2 == 0 ? 1.0 : 0.0;
    nd.arm.push_back(a);
    nd.w.push_back(a - shift);
    const double x0 = nd.X(static_cast<Eigen::Index>(i), 0);
    nd.y.push_back(0.5 * x0 + (x0 > 0 ? 1.5 : -0.5) * a + rng.normal());
  }
  return nd;
}

std::span<const double> col(const Eigen::MatrixXd& X, Eigen::Index j) {
  return {X.col(j).data(), static_cast<std::size_t>(X.rows())};
}

}  // namespace

TEST(FitNodeLm, HandExamples) {
  auto f = fit_node_lm(std::vector<double>{1, 2}, std::vector<double>{0, 1});
  EXPECT_DOUBLE_EQ(f.mu_hat, 1.0);
  EXPECT_DOUBLE_EQ(f.tau_hat, 1.0);
  f = fit_node_lm(std::vector<double>{5, 5, 5, 5}, std::vector<double>{0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(f.mu_hat, 5.0);
  EXPECT_DOUBLE_EQ(f.tau_hat, 0.0);
  f = fit_node_lm(std::vector<double>{1, 3, 2, 6}, std::vector<double>{0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(f.mu_hat, 2.0);
  EXPECT_DOUBLE_EQ(f.tau_hat, 2.0);
  EXPECT_EQ(f.n_node, 4u);
  EXPECT_EQ(f.n_treated, 2u);
  EXPECT_EQ(f.n_control, 2u);
}

TEST(FitNodeLm, Errors) {
  EXPECT_THROW(fit_node_lm(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 1}), NoVariation);
  EXPECT_THROW(fit_node_lm(std::vector<double>{1}, std::vector<double>{1}), ArgumentError);
  EXPECT_THROW(fit_node_lm(std::vector<double>{1, 2}, std::vector<double>{1}), ArgumentError);
  EXPECT_THROW(fit_node_tau(std::vector<double>{1, 2}, std::vector<double>{0, 0}), NoVariation);
}

TEST(FitNodeTau, MomentRatio) {
  auto f = fit_node_tau(std::vector<double>{0, 0, 1, 1}, std::vector<double>{-0.5, -0.5, 0.5, 0.5});
  EXPECT_DOUBLE_EQ(f.tau_hat, 1.0);
  EXPECT_EQ(f.mu_hat, 0.0);
}

TEST(NodeScores, HandExample) {
  std::vector<double> y{1, 3, 2, 6}, w{0, 0, 1, 1};
  auto s = node_scores(y, w, fit_node_lm(y, w), ScoreKind::mob);
  ASSERT_EQ(s.q(), 2);
  const double mu[] = {-1, 1, -2, 2}, tau[] = {0, 0, -2, 2};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(s.psi(i, 0), mu[i], 1e-14);
    EXPECT_NEAR(s.psi(i, 1), tau[i], 1e-14);
  }
}

TEST(NodeScores, ZeroResidualsGiveZeroScores) {
  std::vector<double> w{0, 1, 0, 1, 1}, y;
  for (double v : w) y.push_back(2.0 + 3.0 * v);
  auto s = node_scores(y, w, fit_node_lm(y, w), ScoreKind::mob);
  EXPECT_LT(s.psi.cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT(finite_diff_check(y, w, fit_node_lm(y, w), 1e-6), 1e-8);
}

TEST(NodeScores, ColumnSumsVanishAtFit) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    auto nd = random_node(rng, 10 + rng.index(60), 1, rng.uniform());
    auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
    const double n = static_cast<double>(nd.y.size());
    EXPECT_LT(std::abs(s.psi.col(0).sum()), 1e-8 * n);
    EXPECT_LT(std::abs(s.psi.col(1).sum()), 1e-8 * n);
    auto c = node_scores(nd.y, nd.w, fit_node_tau(nd.y, nd.w), ScoreKind::cf);
    EXPECT_LT(std::abs(c.psi.sum()), 1e-8 * n);
  }
}

TEST(FiniteDiff, RandomNodes) {
  Rng rng(2);
  for (int rep = 0; rep < 30; ++rep) {
    auto nd = random_node(rng, 20, 1);
    auto fit = fit_node_lm(nd.y, nd.w);
    EXPECT_LT(finite_diff_check(nd.y, nd.w, fit, 1e-6), 1e-4);
    // Away from the optimum the identity still holds and the gradient is large.
    NodeFit off = fit;
    off.tau_hat += 0.7;
    const double g = node_scores(nd.y, nd.w, off, ScoreKind::mob).psi.col(1).sum();
    EXPECT_GT(std::abs(g), 0.1);
    EXPECT_LT(finite_diff_check(nd.y, nd.w, off, 1e-5), 1e-4);
  }
  std::vector<double> y{1, 2}, w{0, 1};
  EXPECT_THROW(finite_diff_check(y, w, fit_node_lm(y, w), 1e-2), ArgumentError);
  EXPECT_THROW(finite_diff_check(y, w, fit_node_lm(y, w), 1e-9), ArgumentError);
}

TEST(MultiArm, ThreeArmsRecoverContrasts) {
  Rng rng(3);
  const std::size_t n = 300;
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, 2);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int arm = static_cast<int>(i % 3);
    if (arm > 0) W(static_cast<Eigen::Index>(i), arm - 1) = 1.0;
    y[i] = 1.0 + (arm == 1 ? 2.0 : arm == 2 ? -1.0 : 0.0) + 0.01 * rng.normal();
  }
  auto f = fit_node_lm_multiarm(y, W);
  EXPECT_NEAR(f.mu_hat, 1.0, 0.01);
  EXPECT_NEAR(f.tau_hat[0], 2.0, 0.01);
  EXPECT_NEAR(f.tau_hat[1], -1.0, 0.01);
  auto s = node_scores_multiarm(y, W, f);
  ASSERT_EQ(s.q(), 3);
  EXPECT_LT(s.psi.colwise().sum().cwiseAbs().maxCoeff(), 1e-8 * n);

  // The q=3 statistic and criterion go through the same generic code.
  Eigen::MatrixXd X(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    X(static_cast<Eigen::Index>(i), 0) = rng.normal();
    X(static_cast<Eigen::Index>(i), 1) = static_cast<double>(i);
  }
  std::vector<std::size_t> cand{0, 1};
  auto sel = select_split_variable(s, X, cand);
  EXPECT_EQ(sel.df, 3);
  for (std::size_t k = 0; k < 2; ++k) {
    auto [c, pv] = oracle::quadratic_test(X.col(static_cast<Eigen::Index>(k)), s.psi);
    EXPECT_NEAR(sel.statistic[k], c, 1e-8 * std::max(1.0, c));
    EXPECT_NEAR(sel.p_value[k], pv, 1e-8);
  }
  std::vector<bool> left(n);
  for (std::size_t i = 0; i < n; ++i) left[i] = i < n / 3;
  EXPECT_NEAR(cut_criterion_mob(s, left), oracle::c_mob(s.psi, left), 1e-9);
}

TEST(SelectSplitVariable, NoSignalForZeroScores) {
  ScoreMatrix s{Eigen::MatrixXd::Zero(10, 2), ScoreKind::mob};
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(10, 3);
  std::vector<std::size_t> cand{0, 1, 2};
  EXPECT_TRUE(select_split_variable(s, X, cand).no_signal);
}

TEST(SelectSplitVariable, MatchesOracleStatistic) {
  Rng rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    auto nd = random_node(rng, 40, 4);
    auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
    std::vector<std::size_t> cand{0, 1, 2, 3};
    auto sel = select_split_variable(s, nd.X, cand);
    ASSERT_FALSE(sel.no_signal);
    std::size_t best = 0;
    double best_p = 2.0;
    for (std::size_t k = 0; k < 4; ++k) {
      auto [c, pv] = oracle::quadratic_test(nd.X.col(static_cast<Eigen::Index>(k)), s.psi);
      EXPECT_NEAR(sel.statistic[k], c, 1e-8 * std::max(1.0, c));
      EXPECT_NEAR(sel.p_value[k], pv, 1e-10);
      if (pv < best_p) {
        best_p = pv;
        best = k;
      }
    }
    EXPECT_EQ(*sel.variable, best);
  }
}

TEST(SelectSplitVariable, PowerAgainstNoise) {
  // One covariate equal to psi_tau, the rest independent noise.
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    auto nd = random_node(rng, 200, 1);
    auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
    Eigen::MatrixXd X(200, 5);
    for (Eigen::Index i = 0; i < 200; ++i)
      for (Eigen::Index j = 0; j < 5; ++j) X(i, j) = rng.normal();
    const std::size_t signal = seed % 5;
    X.col(static_cast<Eigen::Index>(signal)) = s.psi.col(1);
    std::vector<std::size_t> cand{0, 1, 2, 3, 4};
    if (*select_split_variable(s, X, cand).variable == signal) ++hits;
  }
  EXPECT_GE(hits, 95);
}

TEST(SelectSplitVariable, RowPermutationInvariant) {
  Rng rng(5);
  auto nd = random_node(rng, 50, 3);
  auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
  std::vector<std::size_t> perm = rng.sample_without_replacement(50, 50);
  ScoreMatrix sp{Eigen::MatrixXd(50, 2), ScoreKind::mob};
  Eigen::MatrixXd Xp(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) {
    sp.psi.row(i) = s.psi.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
    Xp.row(i) = nd.X.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
  }
  std::vector<std::size_t> cand{0, 1, 2};
  auto a = select_split_variable(s, nd.X, cand), b = select_split_variable(sp, Xp, cand);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a.p_value[k], b.p_value[k], 1e-12);
  EXPECT_EQ(a.variable, b.variable);
}

TEST(SelectSplitVariable, ConstantCandidatesRankLast) {
  Rng rng(6);
  auto nd = random_node(rng, 30, 3);
  nd.X.col(0).setConstant(2.0);
  auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
  std::vector<std::size_t> cand{0, 1, 2};
  auto sel = select_split_variable(s, nd.X, cand);
  EXPECT_EQ(sel.order.back(), 0u);
  EXPECT_EQ(sel.p_value[0], 1.0);
}

TEST(CutCriterionMob, IdenticalRowsGiveZero) {
  ScoreMatrix s{Eigen::MatrixXd::Constant(8, 2, 0.3), ScoreKind::mob};
  for (std::size_t nl = 1; nl < 8; ++nl) {
    std::vector<bool> left(8, false);
    for (std::size_t i = 0; i < nl; ++i) left[i] = true;
    EXPECT_NEAR(cut_criterion_mob(s, left), 0.0, 1e-20);
  }
}

TEST(CutCriterionMob, SixRowNodePicksThreeThree) {
  Eigen::MatrixXd psi(6, 2);
  psi << 1, 1, 1, 1, 1, 1, -1, -1, -1, -1, -1, -1;
  ScoreMatrix s{psi, ScoreKind::mob};
  std::vector<double> x{1, 2, 3, 4, 5, 6}, arm{1, 0, 1, 0, 1, 0};
  double best = -1;
  std::size_t best_nl = 0;
  for (std::size_t nl = 1; nl < 6; ++nl) {
    std::vector<bool> left(6);
    for (std::size_t i = 0; i < 6; ++i) left[i] = i < nl;
    const double v = oracle::c_mob(psi, left);
    EXPECT_NEAR(cut_criterion_mob(s, left), v, 1e-12);
    if (v > best) {
      best = v;
      best_nl = nl;
    }
  }
  EXPECT_EQ(best_nl, 3u);
  auto cut = best_cut(s, x, CutCriterion::mob, 0, arm);
  ASSERT_TRUE(cut);
  EXPECT_EQ(cut->cut, 3.5);
  EXPECT_EQ(cut->n_left, 3u);
}

TEST(CutCriterionMob, InvariantUnderLinearTransform) {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    auto nd = random_node(rng, 30, 1);
    auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
    Eigen::Matrix2d A;
    A << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    if (std::abs(A.determinant()) < 0.1) continue;
    ScoreMatrix t{s.psi * A.transpose(), ScoreKind::mob};
    std::vector<bool> left(30);
    for (std::size_t i = 0; i < 30; ++i) left[i] = nd.X(static_cast<Eigen::Index>(i), 0) < 0.2;
    const double a = cut_criterion_mob(s, left), b = cut_criterion_mob(t, left);
    EXPECT_NEAR(a, b, 1e-9 * std::max(1.0, a));
  }
}

TEST(CutCriterionCf, ConstantScoreGivesZero) {
  std::vector<double> psi(10, 0.4), w{-.5, .5, -.5, .5, -.5, .5, -.5, .5, -.5, .5};
  for (std::size_t nl = 1; nl < 10; ++nl) {
    std::vector<bool> left(10);
    for (std::size_t i = 0; i < 10; ++i) left[i] = i < nl;
    EXPECT_NEAR(cut_criterion_cf(psi, w, left), 0.0, 1e-24);
  }
  std::vector<double> zero(10, 0.0);
  std::vector<bool> left(10, false);
  left[0] = true;
  EXPECT_THROW(cut_criterion_cf(psi, zero, left), Degenerate);
}

TEST(CutCriterionCf, EightRowNodeMatchesOracle) {
  // Treated rows with large positive effect first, then negative.
  std::vector<double> y{1.2, -0.1, 0.9, 0.2, -1.1, 0.1, -0.8, -0.2};
  std::vector<double> arm{1, 0, 1, 0, 1, 0, 1, 0}, w, x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  for (double a : arm) w.push_back(a - 0.5);
  auto s = node_scores(y, w, fit_node_tau(y, w), ScoreKind::cf);
  std::vector<double> psi(s.psi.data(), s.psi.data() + 8);
  Eigen::MatrixXd X = Eigen::Map<Eigen::MatrixXd>(x.data(), 8, 1);
  auto want = oracle::brute_force(X, s.psi, arm, w, 1, oracle::Criterion::cf);
  auto got = best_cut(s, x, CutCriterion::cf, 1, arm, w);
  ASSERT_TRUE(want && got);
  EXPECT_EQ(got->cut, want->cut);
  EXPECT_NEAR(got->criterion, want->value, 1e-12);
  for (std::size_t nl = 1; nl < 8; ++nl) {
    std::vector<bool> left(8);
    for (std::size_t i = 0; i < 8; ++i) left[i] = i < nl;
    EXPECT_NEAR(cut_criterion_cf(psi, w, left), oracle::c_cf(psi, w, left), 1e-12);
  }
}

TEST(CutCriterionCf, QuadraticRewritingHasSameArgmax) {
  Rng rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    auto nd = random_node(rng, 12 + rng.index(30), 1, 0.5);
    auto s = node_scores(nd.y, nd.w, fit_node_tau(nd.y, nd.w), ScoreKind::cf);
    std::vector<double> psi(s.psi.data(), s.psi.data() + s.n());
    const std::size_t n = psi.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return nd.X(a, 0) < nd.X(b, 0); });
    std::size_t arg_a = 0, arg_b = 0;
    double best_a = -1, best_b = -1;
    for (std::size_t nl = 1; nl < n; ++nl) {
      std::vector<bool> left(n, false);
      for (std::size_t k = 0; k < nl; ++k) left[order[k]] = true;
      const double a = cut_criterion_cf(psi, nd.w, left), b = oracle::c_cf_quadratic(psi, nd.w, left);
      if (a > best_a) best_a = a, arg_a = nl;
      if (b > best_b) best_b = b, arg_b = nl;
    }
    EXPECT_EQ(arg_a, arg_b);
  }
}

TEST(BestCut, TrivialNone) {
  std::vector<double> x(20, 1.0), arm(20), y(20), w(20);
  for (std::size_t i = 0; i < 20; ++i) {
    arm[i] = static_cast<double>(i % 2);
    w[i] = arm[i];
    y[i] = static_cast<double>(i);
  }
  auto s = node_scores(y, w, fit_node_lm(y, w), ScoreKind::mob);
  EXPECT_FALSE(best_cut(s, x, CutCriterion::mob, 1, arm));
  std::iota(x.begin(), x.end(), 0.0);
  EXPECT_FALSE(best_cut(s, x, CutCriterion::mob, 6, arm));  // 10 treated < 2*6
  EXPECT_TRUE(best_cut(s, x, CutCriterion::mob, 5, arm));
}

TEST(BestCut, TwentyRowNodeMatchesOracle) {
  Rng rng(9);
  for (int rep = 0; rep < 40; ++rep) {
    auto nd = random_node(rng, 20, 1);
    for (auto crit : {CutCriterion::mob, CutCriterion::cf}) {
      auto s = crit == CutCriterion::mob ? node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob)
                                         : node_scores(nd.y, nd.w, fit_node_tau(nd.y, nd.w), ScoreKind::cf);
      auto got = best_cut(s, col(nd.X, 0), crit, 3, nd.arm, nd.w);
      auto want = oracle::brute_force(nd.X, s.psi, nd.arm, nd.w, 3,
                                      crit == CutCriterion::mob ? oracle::Criterion::mob : oracle::Criterion::cf);
      ASSERT_EQ(got.has_value(), want.has_value());
      if (!got) continue;
      EXPECT_EQ(got->cut, want->cut);
      EXPECT_NEAR(got->criterion, want->value, 1e-9 * std::max(1.0, want->value));
    }
  }
}

TEST(BestCut, ChildrenSatisfyArmMinimum) {
  Rng rng(10);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 30 + rng.index(40), m = 1 + rng.index(8);
    auto nd = random_node(rng, n, 1);
    for (auto& a : nd.arm) a = rng.bernoulli(0.4) ? 1.0 : 0.0;
    nd.w = nd.arm;
    double t = std::accumulate(nd.arm.begin(), nd.arm.end(), 0.0);
    if (t < 2 || t > static_cast<double>(n) - 2) continue;
    auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
    auto cut = best_cut(s, col(nd.X, 0), CutCriterion::mob, m, nd.arm);
    if (!cut) continue;
    std::size_t tl = 0, cl = 0, tr = 0, cr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(cut->left[i], nd.X(static_cast<Eigen::Index>(i), 0) <= cut->cut);
      (cut->left[i] ? (nd.arm[i] > 0.5 ? tl : cl) : (nd.arm[i] > 0.5 ? tr : cr))++;
    }
    EXPECT_GE(std::min({tl, cl, tr, cr}), m);
  }
}

TEST(BestCut, RowPermutationInvariant) {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    auto nd = random_node(rng, 40, 1);
    auto s = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
    auto perm = rng.sample_without_replacement(40, 40);
    ScoreMatrix sp{Eigen::MatrixXd(40, 2), ScoreKind::mob};
    std::vector<double> xp(40), ap(40), wp(40);
    for (std::size_t i = 0; i < 40; ++i) {
      sp.psi.row(static_cast<Eigen::Index>(i)) = s.psi.row(static_cast<Eigen::Index>(perm[i]));
      xp[i] = nd.X(static_cast<Eigen::Index>(perm[i]), 0);
      ap[i] = nd.arm[perm[i]];
      wp[i] = nd.w[perm[i]];
    }
    for (auto crit : {CutCriterion::mob, CutCriterion::cf}) {
      auto a = best_cut(s, col(nd.X, 0), crit, 3, nd.arm, nd.w);
      auto b = best_cut(sp, xp, crit, 3, ap, wp);
      ASSERT_EQ(a.has_value(), b.has_value());
      if (a) {
        EXPECT_EQ(a->cut, b->cut);
        EXPECT_NEAR(a->criterion, b->criterion, 1e-9 * std::max(1.0, a->criterion));
      }
    }
  }
}

TEST(ChooseSplit, MobDecisionUnchangedByTreatmentShift) {
  Rng rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    auto nd = random_node(rng, 80, 4);
    const double c = rng.uniform();
    ModelData raw, shifted;
    raw.X = shifted.X = nd.X;
    raw.arm = shifted.arm = Eigen::Map<Eigen::VectorXd>(nd.arm.data(), 80);
    raw.y = shifted.y = raw.y_model = shifted.y_model = Eigen::Map<Eigen::VectorXd>(nd.y.data(), 80);
    raw.w_model = raw.arm;
    shifted.w_model = raw.arm.array() - c;
    std::vector<std::size_t> rows(80), cand{0, 1, 2, 3};
    std::iota(rows.begin(), rows.end(), 0);
    auto a = choose_split(raw, rows, Variant::mob, 7, cand);
    auto b = choose_split(shifted, rows, Variant::mob, 7, cand);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (!a) continue;
    EXPECT_EQ(a->variable, b->variable);
    EXPECT_EQ(a->cut, b->cut);
    EXPECT_EQ(a->criterion, b->criterion);
  }
}
