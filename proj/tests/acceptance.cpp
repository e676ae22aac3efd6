// Acceptance run: one PASS/FAIL line per criterion. Desk-scale sizes:
// N=800, P=10, 500 trees, base seed 1 throughout.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hte/hte.hpp"
#include "oracle.hpp"

using namespace hte;

namespace {

constexpr std::uint64_t kSeed = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ExperimentGrid desk_grid(Setup s, std::vector<Variant> variants, std::size_t reps) {
  ExperimentGrid g;
  g.setups = {s};
  g.n_values = {800};
  g.p_values = {10};
  g.variants = std::move(variants);
  g.reps = reps;
  g.test_n = 1000;
  g.base_seed = kSeed;
  return g;
}

double ratio(const std::vector<ReplicationResult>& rs, const char* pair, Setup s) {
  auto rows = summarize_ratios(rs, {parse_pair(pair)}, {2000, 0.95, kSeed});
  for (const auto& r : rows)
    if (r.setup == s) return r.ratio_estimate;
  return std::nan("");
}

std::size_t failures(const std::vector<ReplicationResult>& rs) {
  std::size_t k = 0;
  for (const auto& r : rs) k += !r.mse;
  return k;
}

std::vector<double> row_of(const Eigen::MatrixXd& X, Eigen::Index i) {
  std::vector<double> x(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index j = 0; j < X.cols(); ++j) x[static_cast<std::size_t>(j)] = X(i, j);
  return x;
}

// Random node: y with heterogeneity in x0, balanced-ish binary arm.
struct Node {
  Eigen::MatrixXd X;
  std::vector<double> y, w, arm;
};

Node random_node(Rng& rng, std::size_t n, std::size_t p) {
  Node nd;
  nd.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  nd.y.resize(n);
  nd.w.resize(n);
  nd.arm.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j)
      nd.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rng.bernoulli(0.2) ? std::round(rng.normal() * 2) : rng.normal();
    nd.arm[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    nd.w[i] = nd.arm[i];
    nd.y[i] = nd.X(static_cast<Eigen::Index>(i), 0) * nd.arm[i] + rng.normal();
  }
  return nd;
}

// Best (variable, cut) by scanning variables with best_cut; strict > keeps
// the earlier variable on ties.
std::optional<oracle::Cut> library_scan(const Node& nd, const ScoreMatrix& s, CutCriterion c, std::size_t m,
                                        std::span<const double> wc) {
  std::optional<oracle::Cut> best;
  const auto n = static_cast<std::size_t>(nd.X.rows());
  for (Eigen::Index j = 0; j < nd.X.cols(); ++j) {
    std::span<const double> xj(nd.X.col(j).data(), n);
    auto r = best_cut(s, xj, c, m, nd.arm, wc);
    if (r && (!best || r->criterion > best->value)) best = oracle::Cut{static_cast<std::size_t>(j), r->cut, r->criterion};
  }
  return best;
}

Outcome ac1() {
  Rng rng(derive_seed(kSeed, {1}));
  int mismatches = 0, with_cut = 0;
  for (int node = 0; node < 200; ++node) {
    const std::size_t n = 20 + rng.index(31), p = 1 + rng.index(4), m = 1 + rng.index(4);
    Node nd = random_node(rng, n, p);
    // C_mob on the bivariate (q = 2) score.
    auto smob = node_scores(nd.y, nd.w, fit_node_lm(nd.y, nd.w), ScoreKind::mob);
    auto got = library_scan(nd, smob, CutCriterion::mob, m, {});
    auto want = oracle::brute_force(nd.X, smob.psi, nd.arm, nd.w, m, oracle::Criterion::mob);
    if (got.has_value() != want.has_value() ||
        (got && (got->variable != want->variable || got->cut != want->cut)))
      ++mismatches;
    with_cut += want.has_value();
    // C_cf on centered data.
    std::vector<double> yc(n), wc(n);
    const double ym = std::accumulate(nd.y.begin(), nd.y.end(), 0.0) / static_cast<double>(n);
    const double wm = std::accumulate(nd.w.begin(), nd.w.end(), 0.0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      yc[i] = nd.y[i] - ym;
      wc[i] = nd.w[i] - wm;
    }
    auto scf = node_scores(yc, wc, fit_node_tau(yc, wc), ScoreKind::cf);
    got = library_scan(nd, scf, CutCriterion::cf, m, wc);
    want = oracle::brute_force(nd.X, scf.psi, nd.arm, wc, m, oracle::Criterion::cf);
    if (got.has_value() != want.has_value() ||
        (got && (got->variable != want->variable || got->cut != want->cut)))
      ++mismatches;
    with_cut += want.has_value();
  }
  return {mismatches == 0 && with_cut > 300,
          "400 scans, " + std::to_string(mismatches) + " mismatches, " + std::to_string(with_cut) + " with a cut"};
}

Outcome ac2() {
  Rng rng(derive_seed(kSeed, {2}));
  double worst_fd = 0.0, worst_sum = 0.0, worst_free = 0.0;
  for (int node = 0; node < 100; ++node) {
    const std::size_t n = 10 + rng.index(191);
    Node nd = random_node(rng, n, 1);
    if (std::count(nd.w.begin(), nd.w.end(), 1.0) < 2 || std::count(nd.w.begin(), nd.w.end(), 0.0) < 2) {
      nd.w[0] = 1.0;
      nd.w[1] = 0.0;
    }
    std::vector<double> wc(n);
    const double wm = std::accumulate(nd.w.begin(), nd.w.end(), 0.0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) wc[i] = nd.w[i] - wm;
    for (ScoreKind kind : {ScoreKind::mob, ScoreKind::cf}) {
      const auto& w = kind == ScoreKind::mob ? nd.w : wc;
      NodeFit fit = kind == ScoreKind::mob ? fit_node_lm(nd.y, w) : fit_node_tau(nd.y, w);
      worst_fd = std::max(worst_fd, finite_diff_check(nd.y, w, fit, 1e-5, kind));
      auto s = node_scores(nd.y, w, fit, kind);
      worst_sum = std::max(worst_sum, s.psi.colwise().sum().cwiseAbs().maxCoeff() / static_cast<double>(n));
      // Away from the fit the scores must still be the negative gradient.
      NodeFit off = fit;
      off.mu_hat += rng.normal();
      off.tau_hat += rng.normal();
      if (kind == ScoreKind::cf) off.mu_hat = 0.0;
      auto so = node_scores(nd.y, w, off, kind);
      auto loss = [&](double mu, double tau) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += 0.5 * std::pow(nd.y[i] - mu - tau * w[i], 2);
        return acc;
      };
      const double h = 1e-5;
      const double g_tau = (loss(off.mu_hat, off.tau_hat + h) - loss(off.mu_hat, off.tau_hat - h)) / (2 * h);
      double dev = std::abs(g_tau + so.psi.col(so.tau_column()).sum()) / (1.0 + std::abs(g_tau));
      if (kind == ScoreKind::mob) {
        const double g_mu = (loss(off.mu_hat + h, off.tau_hat) - loss(off.mu_hat - h, off.tau_hat)) / (2 * h);
        dev = std::max(dev, std::abs(g_mu + so.psi.col(0).sum()) / (1.0 + std::abs(g_mu)));
      }
      worst_free = std::max(worst_free, dev);
    }
  }
  return {worst_fd < 1e-4 && worst_sum < 1e-8 && worst_free < 1e-4,
          "max finite_diff_check " + fmt("%.2e", worst_fd) + ", max |column sum|/n " + fmt("%.2e", worst_sum) +
              ", off-fit gradient rel. error " + fmt("%.2e", worst_free)};
}

Outcome ac3(std::vector<ReplicationResult>& setup_b) {
  auto d = make_replication_data({Setup::B, 800, 10}, 0, 1000, kSeed, 1.0);
  HteForestConfig cfg;
  cfg.n_trees = 500;
  cfg.seed = derive_seed(d.seed, Stream::forest);
  cfg.variant = Variant::mob;
  auto a = fit_hte_forest(d.train, cfg, 0.5).predict_tau(d.X_test);
  cfg.variant = Variant::mobW;
  auto b = fit_hte_forest(d.train, cfg, 0.5).predict_tau(d.X_test);
  std::size_t differ = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) differ += a[i] != b[i];
  const double r = ratio(setup_b, "mobw:mob", Setup::B);
  std::size_t unequal_reps = 0;
  auto lr = paired_log_ratios(setup_b, parse_pair("mobw:mob"), Setup::B, 800, 10, false);
  for (double v : lr.log_ratio) unequal_reps += v != 0.0;
  return {differ == 0 && r == 1.0 && unequal_reps == 0 && !lr.log_ratio.empty(),
          std::to_string(differ) + "/1000 test points differ, ratio " + fmt("%.17g", r) + " over " +
              std::to_string(lr.log_ratio.size()) + " reps"};
}

Outcome window(const std::vector<ReplicationResult>& rs, const char* pair, Setup s, double lo, double hi) {
  const double r = ratio(rs, pair, s);
  return {r >= lo && r <= hi && failures(rs) == 0,
          std::string(pair) + " = " + fmt("%.3f", r) + " (window [" + fmt("%.2f", lo) + ", " + fmt("%.2f", hi) +
              "]), " + std::to_string(failures(rs)) + " failed fits"};
}

Outcome ac5(const std::vector<ReplicationResult>& rs) {
  const double r1 = ratio(rs, "cf:mob", Setup::A), r2 = ratio(rs, "mobw:mob", Setup::A);
  return {r1 >= 0.45 && r1 <= 0.90 && r2 < 0.7 && failures(rs) == 0,
          "cf:mob = " + fmt("%.3f", r1) + " (window [0.45, 0.90]), mobw:mob = " + fmt("%.3f", r2) + " (< 0.7)"};
}

Outcome ac7() {
  auto d = make_replication_data({Setup::C, 800, 10}, 0, 1000, kSeed, 1.0);
  HteForestConfig cfg;
  cfg.variant = Variant::mobW;
  cfg.n_trees = 500;
  cfg.seed = derive_seed(d.seed, Stream::forest);
  const double m = fit_hte_forest(d.train, cfg).predict_tau(d.X_test).mean();
  // Diagnostic only: the same forest centered with the true propensity.
  NuisanceEstimates oracle_pi;
  oracle_pi.m_hat = Eigen::VectorXd::Zero(800);
  oracle_pi.pi_hat = d.train.true_pi;
  oracle_pi.pi_mode = PropensityMode::estimated;
  const double m_true = fit_hte_forest(d.train, cfg, oracle_pi).predict_tau(d.X_test).mean();
  return {std::abs(m - 1.0) <= 0.15, "mean tau-hat " + fmt("%.4f", m) + " (target 1 +/- 0.15); with true pi " +
                                         fmt("%.4f", m_true)};
}

Outcome ac8() {
  // Properties on a desk-scale honest forest.
  auto d = make_replication_data({Setup::C, 800, 10}, 0, 100, kSeed, 1.0);
  std::size_t support_violations = 0, structure_changes = 0;
  for (Variant v : kAllVariants) {
    HteForestConfig cfg;
    cfg.variant = v;
    cfg.n_trees = 1;
    cfg.honest = true;
    cfg.seed = derive_seed(d.seed, Stream::forest);
    cfg.nuisance.n_trees = 100;
    auto f = fit_hte_forest(d.train, cfg);
    const auto& t = f.trees()[0];
    for (Eigen::Index q = 0; q < d.X_test.rows(); ++q) {
      auto fw = f.weights(row_of(d.X_test, q));
      for (auto r : fw.index) support_violations += !std::binary_search(t.estimation_rows.begin(), t.estimation_rows.end(), r);
    }
    for (std::uint64_t s = 0; s < 10; ++s) {
      FittedTree clean = grow_tree(f.data(), cfg, s);
      ModelData poisoned = f.data();
      for (auto r : clean.estimation_rows) poisoned.y_model[r] = poisoned.y[r] = std::nan("");
      FittedTree dirty = grow_tree(poisoned, cfg, s);
      bool same = clean.nodes.size() == dirty.nodes.size() && clean.estimation_rows == dirty.estimation_rows;
      for (std::size_t k = 0; same && k < clean.nodes.size(); ++k)
        same = clean.nodes[k].var == dirty.nodes[k].var && clean.nodes[k].cut == dirty.nodes[k].cut &&
               clean.nodes[k].rows == dirty.nodes[k].rows;
      structure_changes += !same;
    }
  }

  auto g = desk_grid(Setup::C, {Variant::cf, Variant::mobcf}, 10);
  g.honest_modes = {false, true};
  auto rs = run_grid(g, RunOptions{});
  {
    std::ofstream os("acceptance_honesty_results.csv");
    write_results_csv(os, rs);
    std::ofstream ss("acceptance_honesty_summary.csv");
    write_summary_csv(ss, summarize_ratios(rs, {parse_pair("cf@honest:cf@adaptive"), parse_pair("mobcf@honest:mobcf@adaptive")},
                                           {2000, 0.95, kSeed}));
  }
  std::string detail;
  bool ok = support_violations == 0 && structure_changes == 0 && failures(rs) == 0;
  for (const char* pair : {"cf@honest:cf@adaptive", "mobcf@honest:mobcf@adaptive"}) {
    auto lr = paired_log_ratios(rs, parse_pair(pair), Setup::C, 800, 10, std::nullopt);
    std::size_t wins = 0;
    for (double v : lr.log_ratio) wins += v < 0.0;
    ok = ok && lr.log_ratio.size() == 10 && wins >= 7;
    detail += std::string(pair) + " " + std::to_string(wins) + "/" + std::to_string(lr.log_ratio.size()) +
              " reps < 1 (ratio " + fmt("%.3f", std::exp(std::accumulate(lr.log_ratio.begin(), lr.log_ratio.end(), 0.0) /
                                                           static_cast<double>(lr.log_ratio.size()))) +
              "); ";
  }
  detail += "support violations " + std::to_string(support_violations) + ", poisoned structure changes " +
            std::to_string(structure_changes) + "; CSVs acceptance_honesty_{results,summary}.csv";
  return {ok, detail};
}

Outcome ac9(const std::vector<ReplicationResult>& measured) {
  ExperimentGrid full;
  full.setups = {Setup::A, Setup::B, Setup::C, Setup::D};
  full.n_values = {800, 1600};
  full.p_values = {10, 20};
  full.reps = 100;
  full.validate();
  const std::size_t fits = grid_fit_count(full);
  auto model = fit_runtime_model(measured);
  const double ms = extrapolate_runtime_ms(model, full);
  return {fits == 8000 && std::isfinite(ms) && ms > 0.0,
          std::to_string(fits) + " fits accepted, extrapolated " + fmt("%.2f", ms / 3.6e6) + " CPU hours from " +
              std::to_string(measured.size()) + " timed desk fits"};
}

int failed = 0;

void report(const char* name, const std::function<Outcome()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failed += !o.pass;
  std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), s);
  std::fflush(stdout);
}

}  // namespace

int main() {
  report("AC1 oracle split equivalence", ac1);
  report("AC2 score/gradient identity", ac2);

  std::vector<ReplicationResult> a, b, c;
  auto run = [](Setup s, std::vector<Variant> v, std::size_t reps) { return run_grid(desk_grid(s, v, reps), RunOptions{}); };
  report("AC3 mob/mobW identity, setup B", [&] {
    b = run(Setup::B, {Variant::cf, Variant::mob, Variant::mobW, Variant::mobcf}, 20);
    return ac3(b);
  });
  report("AC4 setup C mobW/mob", [&] {
    c = run(Setup::C, {Variant::mob, Variant::mobW}, 20);
    return window(c, "mobw:mob", Setup::C, 0.10, 0.40);
  });
  report("AC5 setup A ordering", [&] {
    a = run(Setup::A, {Variant::cf, Variant::mob, Variant::mobW}, 20);
    return ac5(a);
  });
  report("AC6 setup B cf/mobcf", [&] { return window(b, "cf:mobcf", Setup::B, 0.8, 1.25); });
  report("AC7 setup C constant effect", ac7);
  report("AC8 honesty", ac8);
  report("AC9 full grid and runtime extrapolation", [&] {
    std::vector<ReplicationResult> all = a;
    all.insert(all.end(), b.begin(), b.end());
    all.insert(all.end(), c.begin(), c.end());
    return ac9(all);
  });
  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
