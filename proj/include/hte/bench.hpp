#pragma once

// Replication harness: paired training/test data per (setup, n, p, rep),
// every requested variant fitted on the same rows, MSE of tau-hat against
// the true CATE on fresh test covariates, and paired geometric-mean ratios
// with percentile-bootstrap intervals.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "hte/dgp.hpp"
#include "hte/errors.hpp"
#include "hte/forest.hpp"
#include "hte/nuisance.hpp"
#include "hte/parallel.hpp"
#include "hte/random.hpp"
#include "hte/variant.hpp"

namespace hte {

/// How the propensity used for centering is obtained.
///   automatic : known 0.5 for the randomized Setup B, estimated otherwise
///   estimate  : always estimated
///   constant  : the given value for every setup
struct PropensityPolicy {
  enum class Kind { automatic, estimate, constant } kind = Kind::automatic;
  double value = 0.5;

  std::optional<double> for_setup(Setup s) const {
    switch (kind) {
      case Kind::automatic: return s == Setup::B ? std::optional<double>(0.5) : std::nullopt;
      case Kind::estimate: return std::nullopt;
      case Kind::constant: return value;
    }
    return std::nullopt;
  }
};

struct ExperimentGrid {
  std::vector<Setup> setups{Setup::A};
  std::vector<std::size_t> n_values{800};
  std::vector<std::size_t> p_values{10};
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::vector<bool> honest_modes{false};
  std::size_t reps = 20;
  std::size_t test_n = 1000;
  std::uint64_t base_seed = 0;

  void validate() const {
    if (reps < 1) throw ArgumentError("reps must be >= 1");
    if (test_n < 1) throw ArgumentError("test_n must be >= 1");
    if (setups.empty() || n_values.empty() || p_values.empty() || variants.empty() || honest_modes.empty())
      throw ArgumentError("every grid dimension needs at least one value");
    for (auto p : p_values)
      if (p < 5) throw ArgumentError("p must be >= 5");
  }
};

struct RunOptions {
  std::size_t n_trees = 500;
  std::size_t min_per_arm = 7;
  double noise_sd = 1.0;
  PropensityPolicy propensity{};
  RegressionForestConfig nuisance{};
  unsigned threads = 0;  // 0: HTE_THREADS or hardware concurrency
  bool timing = true;    // false: runtime_ms written as 0 (byte-identical reruns)
};

struct GridCell {
  Setup setup = Setup::A;
  std::size_t n = 800;
  std::size_t p = 10;
};

struct ReplicationResult {
  Setup setup = Setup::A;
  std::size_t n = 0;
  std::size_t p = 0;
  Variant variant = Variant::mob;
  bool honest = false;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  std::optional<double> mse;  // nullopt: fit failed
  double runtime_ms = 0.0;
  std::string error;          // reason when mse is missing (not serialized)

  bool operator==(const ReplicationResult& o) const {
    return std::tie(setup, n, p, variant, honest, rep, seed, mse, runtime_ms) ==
           std::tie(o.setup, o.n, o.p, o.variant, o.honest, o.rep, o.seed, o.mse, o.runtime_ms);
  }
};

/// Seed of the shared training/test data of one replication:
/// derive_seed(base_seed, {replication, setup, n, p, rep}).
inline std::uint64_t replication_seed(std::uint64_t base_seed, const GridCell& cell, std::size_t rep) {
  return derive_seed(base_seed, {static_cast<std::uint64_t>(Stream::replication), static_cast<std::uint64_t>(cell.setup),
                                 cell.n, cell.p, rep});
}

inline double mean_squared_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size() || truth.size() == 0) throw ArgumentError("mse: length mismatch");
  return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

/// Produces tau-hat at X_test for one variant/honesty mode. The default
/// predictor fits an HteForest; tests inject alternatives.
using Predictor = std::function<Eigen::VectorXd(const SimulatedSample& train, const Eigen::MatrixXd& X_test,
                                                Variant variant, bool honest)>;

struct ReplicationData {
  std::uint64_t seed = 0;
  SimulatedSample train;
  Eigen::MatrixXd X_test;
  Eigen::VectorXd tau_test;
};

inline ReplicationData make_replication_data(const GridCell& cell, std::size_t rep, std::size_t test_n,
                                             std::uint64_t base_seed, double noise_sd = 1.0) {
  ReplicationData d;
  d.seed = replication_seed(base_seed, cell, rep);
  DgpSpec spec{cell.setup, cell.n, cell.p, noise_sd, d.seed};
  d.train = generate(spec);
  DgpSpec test_spec{cell.setup, test_n, cell.p, noise_sd, d.seed};
  Rng test_rng(derive_seed(d.seed, Stream::test_covariates));
  d.X_test = sample_covariates(test_spec, test_rng);
  d.tau_test = true_cate(cell.setup, d.X_test);
  return d;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace detail

/// One replication of one grid cell with a caller-supplied predictor.
/// Results are ordered honest mode-major, then variant, as given.
inline std::vector<ReplicationResult> run_replication(const GridCell& cell, std::size_t rep,
                                                      const ExperimentGrid& grid, const RunOptions& opt,
                                                      const Predictor& predictor) {
  const ReplicationData d = make_replication_data(cell, rep, grid.test_n, grid.base_seed, opt.noise_sd);
  std::vector<ReplicationResult> out;
  for (bool honest : grid.honest_modes) {
    for (Variant v : grid.variants) {
      ReplicationResult r{cell.setup, cell.n, cell.p, v, honest, rep, d.seed, std::nullopt, 0.0, {}};
      const auto start = detail::Clock::now();
      try {
        r.mse = mean_squared_error(predictor(d.train, d.X_test, v, honest), d.tau_test);
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      r.runtime_ms = opt.timing ? detail::elapsed_ms(start) : 0.0;
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// One replication with forest fits. Nuisance fits are computed once and
/// shared by all variants; each variant's runtime includes the nuisance fits
/// it uses, as if fitted alone.
inline std::vector<ReplicationResult> run_replication(const GridCell& cell, std::size_t rep,
                                                      const ExperimentGrid& grid, const RunOptions& opt,
                                                      unsigned forest_threads = 1) {
  const ReplicationData d = make_replication_data(cell, rep, grid.test_n, grid.base_seed, opt.noise_sd);
  const std::uint64_t forest_seed = derive_seed(d.seed, Stream::forest);
  const std::optional<double> pi_known = opt.propensity.for_setup(cell.setup);
  const auto n = static_cast<Eigen::Index>(cell.n);

  RegressionForestConfig ncfg = opt.nuisance;
  ncfg.threads = forest_threads;
  const bool need_m = std::any_of(grid.variants.begin(), grid.variants.end(), centers_outcome);
  const bool need_pi = std::any_of(grid.variants.begin(), grid.variants.end(), centers_treatment);

  NuisanceEstimates full;
  full.m_hat = Eigen::VectorXd::Zero(n);
  full.pi_hat = Eigen::VectorXd::Zero(n);
  double m_ms = 0.0, pi_ms = 0.0;
  std::string nuisance_error;
  try {
    if (need_m) {
      const auto t0 = detail::Clock::now();
      full.m_hat = fit_outcome_nuisance(d.train, ncfg, forest_seed, &full.oob_fallbacks);
      m_ms = detail::elapsed_ms(t0);
    }
    if (need_pi) {
      const auto t0 = detail::Clock::now();
      if (pi_known) {
        full.pi_mode = PropensityMode::known;
        full.pi_constant = *pi_known;
        full.pi_hat = Eigen::VectorXd::Constant(n, *pi_known);
      } else {
        full.pi_mode = PropensityMode::estimated;
        full.pi_hat = fit_propensity_nuisance(d.train, ncfg, forest_seed, &full.oob_fallbacks);
      }
      pi_ms = detail::elapsed_ms(t0);
    }
  } catch (const std::exception& e) {
    nuisance_error = std::string("nuisance fit failed: ") + e.what();
  }

  std::vector<ReplicationResult> out;
  for (bool honest : grid.honest_modes) {
    for (Variant v : grid.variants) {
      ReplicationResult r{cell.setup, cell.n, cell.p, v, honest, rep, d.seed, std::nullopt, 0.0, {}};
      const auto start = detail::Clock::now();
      double extra = 0.0;
      if (centers_outcome(v)) extra += m_ms;
      if (centers_treatment(v)) extra += pi_ms;
      if (!nuisance_error.empty() && (centers_outcome(v) || centers_treatment(v))) {
        r.error = nuisance_error;
      } else {
        try {
          HteForestConfig cfg;
          cfg.variant = v;
          cfg.n_trees = opt.n_trees;
          cfg.min_per_arm = opt.min_per_arm;
          cfg.honest = honest;
          cfg.seed = forest_seed;
          cfg.threads = forest_threads;
          cfg.nuisance = opt.nuisance;
          HteForest forest = fit_hte_forest(d.train, cfg, restrict_to(full, v));
          r.mse = mean_squared_error(forest.predict_tau(d.X_test, forest_threads), d.tau_test);
        } catch (const std::exception& e) {
          r.error = e.what();
        }
      }
      r.runtime_ms = opt.timing ? detail::elapsed_ms(start) + extra : 0.0;
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline std::vector<GridCell> grid_cells(const ExperimentGrid& grid) {
  std::vector<GridCell> cells;
  for (Setup s : grid.setups)
    for (auto n : grid.n_values)
      for (auto p : grid.p_values) cells.push_back({s, n, p});
  return cells;
}

/// Number of forest fits the grid requests.
inline std::size_t grid_fit_count(const ExperimentGrid& grid) {
  return grid_cells(grid).size() * grid.reps * grid.variants.size() * grid.honest_modes.size();
}

/// Runs all (cell, rep) jobs, `threads` at a time, each job single-threaded.
/// Results come back in grid order regardless of completion order.
inline std::vector<ReplicationResult> run_grid(const ExperimentGrid& grid, const RunOptions& opt,
                                               const std::function<void(std::size_t, std::size_t)>& progress = {}) {
  grid.validate();
  const auto cells = grid_cells(grid);
  const std::size_t jobs = cells.size() * grid.reps;
  std::vector<std::vector<ReplicationResult>> slots(jobs);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  parallel_for(jobs, resolve_threads(opt.threads), [&](std::size_t j) {
    slots[j] = run_replication(cells[j / grid.reps], j % grid.reps, grid, opt, 1);
    const std::size_t finished = ++done;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(finished, jobs);
    }
  });
  std::vector<ReplicationResult> out;
  for (auto& s : slots) out.insert(out.end(), s.begin(), s.end());
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kResultsHeader = "setup,n,p,variant,honest,rep,seed,mse,runtime_ms";

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
T parse_number(const std::string& s, const char* what, std::size_t line_no) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s, std::size_t line_no) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw FormatError("line " + std::to_string(line_no) + ": bad honest flag '" + s + "'");
}

}  // namespace detail

/// Writes the results CSV (header kResultsHeader, '.' decimals, '\n' line ends).
/// Reals use the shortest representation that round-trips; a failed fit has mse "NA".
inline void write_results_csv(std::ostream& os, const std::vector<ReplicationResult>& results) {
  os << kResultsHeader << '\n';
  for (const auto& r : results) {
    os << to_char(r.setup) << ',' << r.n << ',' << r.p << ',' << to_string(r.variant) << ','
       << (r.honest ? "true" : "false") << ',' << r.rep << ',' << r.seed << ','
       << (r.mse ? detail::format_double(*r.mse) : std::string("NA")) << ',' << detail::format_double(r.runtime_ms)
       << '\n';
  }
}

inline std::vector<ReplicationResult> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("results CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw FormatError("results CSV: unexpected header '" + line + "'");
  std::vector<ReplicationResult> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 9) throw FormatError("line " + std::to_string(line_no) + ": expected 9 fields");
    ReplicationResult r;
    try {
      r.setup = parse_setup(f[0]);
      r.variant = parse_variant(f[3]);
    } catch (const ArgumentError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    r.n = detail::parse_number<std::size_t>(f[1], "n", line_no);
    r.p = detail::parse_number<std::size_t>(f[2], "p", line_no);
    r.honest = detail::parse_bool(f[4], line_no);
    r.rep = detail::parse_number<std::size_t>(f[5], "rep", line_no);
    r.seed = detail::parse_number<std::uint64_t>(f[6], "seed", line_no);
    if (f[7] != "NA") {
      r.mse = detail::parse_number<double>(f[7], "mse", line_no);
      if (!(*r.mse >= 0.0)) throw FormatError("line " + std::to_string(line_no) + ": mse must be >= 0");
    }
    r.runtime_ms = detail::parse_number<double>(f[8], "runtime_ms", line_no);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired ratio summaries

/// A pair member: a variant, optionally pinned to one honesty mode
/// (written "cf", "cf@honest", "cf@adaptive").
struct PairMember {
  Variant variant = Variant::mob;
  std::optional<bool> honest;

  std::string label() const {
    std::string s(to_string(variant));
    if (honest) s += *honest ? "@honest" : "@adaptive";
    return s;
  }
};

struct ComparisonPair {
  PairMember a;  // numerator
  PairMember b;  // denominator

  std::string label() const { return a.label() + ":" + b.label(); }
};

inline PairMember parse_pair_member(std::string_view s) {
  PairMember m;
  auto at = s.find('@');
  m.variant = parse_variant(s.substr(0, at));
  if (at != std::string_view::npos) {
    auto mode = s.substr(at + 1);
    if (mode == "honest") m.honest = true;
    else if (mode == "adaptive") m.honest = false;
    else throw ArgumentError("unknown honesty mode '" + std::string(mode) + "'");
  }
  return m;
}

inline ComparisonPair parse_pair(std::string_view s) {
  auto colon = s.find(':');
  if (colon == std::string_view::npos) throw ArgumentError("pair '" + std::string(s) + "' must look like a:b");
  ComparisonPair p{parse_pair_member(s.substr(0, colon)), parse_pair_member(s.substr(colon + 1))};
  if (p.a.honest.has_value() != p.b.honest.has_value())
    throw ArgumentError("pair '" + std::string(s) + "': pin the honesty mode on both sides or neither");
  return p;
}

/// The six comparisons of the benchmark table.
inline std::vector<ComparisonPair> default_pairs() {
  std::vector<ComparisonPair> out;
  for (const char* s : {"cf:mob", "mobcf:mobwy", "cf:mobcf", "mobw:mob", "mobw:mobcf", "mobw:mobwy"})
    out.push_back(parse_pair(s));
  return out;
}

struct SummaryRow {
  std::string comparison;
  Setup setup = Setup::A;
  std::size_t n = 0;
  std::size_t p = 0;
  std::string honest;  // "true", "false" or "mixed" for cross-mode pairs
  std::size_t reps = 0;
  double ratio_estimate = 1.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
};

struct SummaryOptions {
  std::size_t bootstrap = 2000;
  double level = 0.95;
  std::uint64_t seed = 0;
};

/// Per-rep log(mse_a / mse_b) for one cell, in rep order. Reps where either
/// side is missing are skipped; both zero counts as log 1; one zero is skipped.
struct PairedLogRatios {
  std::vector<std::size_t> reps;
  std::vector<double> log_ratio;
  std::size_t dropped = 0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

using CellKey = std::tuple<int, std::size_t, std::size_t>;

}  // namespace detail

inline PairedLogRatios paired_log_ratios(const std::vector<ReplicationResult>& results, const ComparisonPair& pair,
                                         Setup setup, std::size_t n, std::size_t p, std::optional<bool> honest) {
  std::map<std::size_t, double> a, b;
  std::map<std::size_t, bool> missing_a, missing_b;
  auto matches = [&](const ReplicationResult& r, const PairMember& m) {
    if (r.setup != setup || r.n != n || r.p != p || r.variant != m.variant) return false;
    const bool mode = m.honest ? *m.honest : *honest;
    return r.honest == mode;
  };
  for (const auto& r : results) {
    if (matches(r, pair.a)) {
      if (r.mse) a[r.rep] = *r.mse;
      else missing_a[r.rep] = true;
    }
    if (matches(r, pair.b)) {
      if (r.mse) b[r.rep] = *r.mse;
      else missing_b[r.rep] = true;
    }
  }
  PairedLogRatios out;
  std::map<std::size_t, bool> all_reps;
  for (auto& [k, _] : a) all_reps[k] = true;
  for (auto& [k, _] : b) all_reps[k] = true;
  for (auto& [k, _] : missing_a) all_reps[k] = true;
  for (auto& [k, _] : missing_b) all_reps[k] = true;
  for (auto& [rep, _] : all_reps) {
    auto ia = a.find(rep), ib = b.find(rep);
    if (ia == a.end() || ib == b.end()) {
      ++out.dropped;
      continue;
    }
    double lr;
    if (ia->second == 0.0 && ib->second == 0.0) lr = 0.0;
    else if (ia->second == 0.0 || ib->second == 0.0) {
      ++out.dropped;
      continue;
    } else lr = std::log(ia->second / ib->second);
    out.reps.push_back(rep);
    out.log_ratio.push_back(lr);
  }
  return out;
}

/// ratio = exp(mean log(mse_a / mse_b)) over paired reps; interval from a
/// percentile bootstrap over reps. Cells are visited in (setup, n, p, honest)
/// order for each pair in the order given. Warnings about unpaired reps are
/// appended to `warnings`.
inline std::vector<SummaryRow> summarize_ratios(const std::vector<ReplicationResult>& results,
                                                const std::vector<ComparisonPair>& pairs,
                                                const SummaryOptions& opt = {},
                                                std::vector<std::string>* warnings = nullptr) {
  if (opt.bootstrap < 1) throw ArgumentError("bootstrap resamples must be >= 1");
  if (!(opt.level > 0.0 && opt.level < 1.0)) throw ArgumentError("confidence level must be in (0, 1)");
  std::map<std::tuple<int, std::size_t, std::size_t, int>, bool> cells;
  for (const auto& r : results) cells[{static_cast<int>(r.setup), r.n, r.p, r.honest ? 1 : 0}] = true;

  std::vector<SummaryRow> out;
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& pair = pairs[pi];
    const bool pinned = pair.a.honest.has_value();
    std::map<std::tuple<int, std::size_t, std::size_t, int>, bool> visit;
    for (auto& [key, _] : cells) {
      auto k = key;
      if (pinned) std::get<3>(k) = -1;
      visit[k] = true;
    }
    for (auto& [key, _] : visit) {
      const auto [s, n, p, h] = key;
      const Setup setup = static_cast<Setup>(s);
      const std::optional<bool> honest = h < 0 ? std::nullopt : std::optional<bool>(h == 1);
      PairedLogRatios lr = paired_log_ratios(results, pair, setup, n, p, honest);
      if (lr.dropped > 0 && warnings)
        warnings->push_back(pair.label() + " setup " + to_char(setup) + " n=" + std::to_string(n) +
                            " p=" + std::to_string(p) + ": dropped " + std::to_string(lr.dropped) + " unpaired reps");
      if (lr.log_ratio.empty()) continue;

      const std::size_t m = lr.log_ratio.size();
      double mean = 0.0;
      for (double v : lr.log_ratio) mean += v;
      mean /= static_cast<double>(m);

      Rng rng(derive_seed(opt.seed, {static_cast<std::uint64_t>(Stream::bootstrap), pi, static_cast<std::uint64_t>(s),
                                     n, p, static_cast<std::uint64_t>(h + 1)}));
      std::vector<double> boot(opt.bootstrap);
      for (auto& b : boot) {
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k) acc += lr.log_ratio[rng.index(m)];
        b = acc / static_cast<double>(m);
      }
      std::sort(boot.begin(), boot.end());
      const double tail = (1.0 - opt.level) / 2.0;
      SummaryRow row;
      row.comparison = pair.label();
      row.setup = setup;
      row.n = n;
      row.p = p;
      row.honest = h < 0 ? "mixed" : (h == 1 ? "true" : "false");
      row.reps = m;
      row.ratio_estimate = std::exp(mean);
      // The percentile interval of a bootstrapped mean can miss the point
      // estimate by rounding when all replicates coincide; widen to contain it.
      row.ci_low = std::min(std::exp(detail::quantile_sorted(boot, tail)), row.ratio_estimate);
      row.ci_high = std::max(std::exp(detail::quantile_sorted(boot, 1.0 - tail)), row.ratio_estimate);
      out.push_back(row);
    }
  }
  return out;
}

inline constexpr const char* kSummaryHeader = "comparison,setup,n,p,honest,reps,ratio,ci_low,ci_high";

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << kSummaryHeader << '\n';
  for (const auto& r : rows)
    os << r.comparison << ',' << to_char(r.setup) << ',' << r.n << ',' << r.p << ',' << r.honest << ',' << r.reps << ','
       << detail::format_double(r.ratio_estimate) << ',' << detail::format_double(r.ci_low) << ','
       << detail::format_double(r.ci_high) << '\n';
}

// ---------------------------------------------------------------------------
// Runtime extrapolation

/// runtime_ms ~ slope * n * p (through the origin), fitted per
/// (variant, honest) from measured results, with a pooled slope as fallback.
struct RuntimeModel {
  std::map<std::pair<Variant, bool>, double> slope;
  double pooled_slope = 0.0;
  double trees_measured = 0.0;

  double predict_ms(Variant v, bool honest, std::size_t n, std::size_t p) const {
    auto it = slope.find({v, honest});
    const double s = it != slope.end() ? it->second : pooled_slope;
    return s * static_cast<double>(n) * static_cast<double>(p);
  }
};

inline RuntimeModel fit_runtime_model(const std::vector<ReplicationResult>& results) {
  std::map<std::pair<Variant, bool>, std::pair<double, double>> acc;  // sum(r u), sum(u^2)
  double pr = 0.0, pu = 0.0;
  for (const auto& r : results) {
    if (!r.mse || r.runtime_ms <= 0.0) continue;
    const double u = static_cast<double>(r.n) * static_cast<double>(r.p);
    auto& a = acc[{r.variant, r.honest}];
    a.first += r.runtime_ms * u;
    a.second += u * u;
    pr += r.runtime_ms * u;
    pu += u * u;
  }
  if (pu == 0.0) throw ArgumentError("no timed results to extrapolate from");
  RuntimeModel m;
  for (auto& [k, v] : acc) m.slope[k] = v.first / v.second;
  m.pooled_slope = pr / pu;
  return m;
}

/// Predicted total runtime (ms, single thread) of every fit in the grid.
inline double extrapolate_runtime_ms(const RuntimeModel& model, const ExperimentGrid& grid) {
  double total = 0.0;
  for (const auto& c : grid_cells(grid))
    for (Variant v : grid.variants)
      for (bool h : grid.honest_modes) total += model.predict_ms(v, h, c.n, c.p) * static_cast<double>(grid.reps);
  return total;
}

}  // namespace hte
