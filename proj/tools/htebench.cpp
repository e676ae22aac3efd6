// htebench: simulation harness for the treatment-effect forests.
//
//   htebench run       --setup B --n 800 --p 10 --variants mob,mobw --reps 2 --seed 7 --out r.csv
//   htebench summarize --in r.csv --pairs mobw:mob [--out s.csv]
//   htebench plan      --in r.csv --setup A,B,C,D --n 800,1600 --p 10,20 --reps 100
//   htebench simulate  --setup C --n 800 --p 10 --seed 1 --out sample.csv
//   htebench nuisance  --setup C --n 800 --p 10 --seed 1 --out nuisance.csv
//
// Exit status: 0 ok, 1 configuration error, 2 runtime or I/O error.
// Thread count: --threads, else HTE_THREADS, else all cores.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "hte/hte.hpp"

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& s : items) {
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::vector<std::size_t> parse_counts(const std::vector<std::string>& items, const char* what) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(items)) {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ConfigError(std::string("bad ") + what + " '" + s + "'");
    out.push_back(v);
  }
  return out;
}

struct GridFlags {
  std::vector<std::string> setups{"A"};
  std::vector<std::string> n{"800"};
  std::vector<std::string> p{"10"};
  std::vector<std::string> variants{"cf,mob,mobw,mobwy,mobcf"};
  std::string honest = "false";
  std::size_t reps = 20;
  std::size_t test_n = 1000;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--setup", setups, "setups, comma separated (A,B,C,D)")->delimiter(',');
    app->add_option("--n", n, "training sizes")->delimiter(',');
    app->add_option("--p", p, "covariate dimensions")->delimiter(',');
    app->add_option("--variants", variants, "variants (cf,mob,mobw,mobwy,mobcf)")->delimiter(',');
    app->add_option("--honest", honest, "true, false or both")->check(CLI::IsMember({"true", "false", "both"}));
    app->add_option("--reps", reps, "replications per cell");
    app->add_option("--test-n", test_n, "test covariate sample size");
    app->add_option("--seed", seed, "base seed");
  }

  hte::ExperimentGrid grid() const {
    hte::ExperimentGrid g;
    g.setups.clear();
    for (const auto& s : split_list(setups)) g.setups.push_back(hte::parse_setup(s));
    g.n_values = parse_counts(n, "n");
    g.p_values = parse_counts(p, "p");
    g.variants.clear();
    for (const auto& v : split_list(variants)) g.variants.push_back(hte::parse_variant(v));
    if (honest == "both") g.honest_modes = {false, true};
    else g.honest_modes = {honest == "true"};
    g.reps = reps;
    g.test_n = test_n;
    g.base_seed = seed;
    g.validate();
    for (auto v : g.n_values)
      if (v < 1) throw hte::ArgumentError("n must be >= 1");
    return g;
  }
};

hte::PropensityPolicy parse_pi_known(const std::string& s) {
  hte::PropensityPolicy p;
  if (s == "auto") return p;
  if (s == "estimate" || s == "none") {
    p.kind = hte::PropensityPolicy::Kind::estimate;
    return p;
  }
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !(v > 0.0 && v < 1.0))
    throw ConfigError("--pi-known must be auto, estimate, or a number in (0, 1)");
  p.kind = hte::PropensityPolicy::Kind::constant;
  p.value = v;
  return p;
}

/// "-" or empty: stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_) throw IoError("cannot open '" + path + "' for writing");
    path_ = path;
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }
  void close() {
    if (!file_) {
      std::cout.flush();
      return;
    }
    file_->close();
    if (!*file_) throw IoError("write to '" + path_ + "' failed");
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::string path_;
};

std::vector<hte::ReplicationResult> read_results(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return hte::read_results_csv(in);
}

struct SampleFlags {
  std::string setup = "A";
  std::size_t n = 800;
  std::size_t p = 10;
  std::uint64_t seed = 0;
  double noise_sd = 1.0;

  void add(CLI::App* app) {
    app->add_option("--setup", setup, "setup (A,B,C,D)");
    app->add_option("--n", n, "sample size");
    app->add_option("--p", p, "covariate dimension");
    app->add_option("--seed", seed, "seed");
    app->add_option("--noise-sd", noise_sd, "noise standard deviation");
  }

  hte::DgpSpec spec() const {
    hte::DgpSpec s{hte::parse_setup(setup), n, p, noise_sd, seed};
    s.validate();
    return s;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation harness for treatment-effect forests"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run the replication grid and write per-fit results");
  GridFlags run_grid;
  run_grid.add(run);
  std::string run_out = "-";
  std::size_t trees = 500, nuisance_trees = 500, nuisance_mtry = 0, min_per_arm = 7;
  bool nuisance_honest = false;
  unsigned threads = 0;
  std::string pi_known = "auto";
  bool no_timing = false, quiet = false;
  double noise_sd = 1.0;
  run->add_option("--out", run_out, "results CSV ('-' for stdout)");
  run->add_option("--trees", trees, "trees per forest");
  run->add_option("--nuisance-trees", nuisance_trees, "trees per nuisance forest");
  run->add_option("--nuisance-mtry", nuisance_mtry, "variables per nuisance split (0: ceil(sqrt(p)))");
  run->add_flag("--nuisance-honest", nuisance_honest, "honest nuisance trees");
  run->add_option("--min-per-arm", min_per_arm, "minimum rows of each arm per child");
  run->add_option("--threads", threads, "worker threads (0: HTE_THREADS or all cores)");
  run->add_option("--pi-known", pi_known, "auto (0.5 for setup B), estimate, or a constant in (0,1)");
  run->add_option("--noise-sd", noise_sd, "noise standard deviation");
  run->add_flag("--no-timing", no_timing, "write runtime_ms as 0");
  run->add_flag("--quiet", quiet, "no progress on stderr");

  // summarize
  auto* summarize = app.add_subcommand("summarize", "paired mse ratios with bootstrap intervals");
  std::string sum_in, sum_out = "-";
  std::vector<std::string> pairs;
  std::size_t bootstrap = 2000;
  double level = 0.95;
  std::uint64_t sum_seed = 0;
  summarize->add_option("--in", sum_in, "results CSV")->required();
  summarize->add_option("--out", sum_out, "summary CSV ('-' for stdout)");
  summarize->add_option("--pairs", pairs, "comparisons a:b, e.g. mobw:mob or cf@honest:cf@adaptive")->delimiter(',');
  summarize->add_option("--bootstrap", bootstrap, "bootstrap resamples");
  summarize->add_option("--level", level, "confidence level");
  summarize->add_option("--seed", sum_seed, "bootstrap seed");

  // plan
  auto* plan = app.add_subcommand("plan", "extrapolate the runtime of a grid from measured results");
  GridFlags plan_grid;
  plan_grid.setups = {"A,B,C,D"};
  plan_grid.n = {"800,1600"};
  plan_grid.p = {"10,20"};
  plan_grid.reps = 100;
  plan_grid.add(plan);
  std::string plan_in;
  unsigned plan_threads = 1;
  plan->add_option("--in", plan_in, "results CSV with measured runtimes")->required();
  plan->add_option("--threads", plan_threads, "threads to divide the total by");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "write one simulated sample as CSV");
  SampleFlags sim;
  sim.add(simulate);
  std::string sim_out = "-";
  simulate->add_option("--out", sim_out, "sample CSV ('-' for stdout)");

  // nuisance
  auto* nuisance = app.add_subcommand("nuisance", "out-of-bag nuisance estimates for one sample");
  SampleFlags nsim;
  nsim.add(nuisance);
  std::string nu_out = "-";
  std::size_t nu_trees = 500;
  unsigned nu_threads = 0;
  nuisance->add_option("--out", nu_out, "nuisance CSV ('-' for stdout)");
  nuisance->add_option("--trees", nu_trees, "trees per nuisance forest");
  nuisance->add_option("--threads", nu_threads, "threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) {
      hte::ExperimentGrid grid = run_grid.grid();
      hte::RunOptions opt;
      opt.n_trees = trees;
      opt.min_per_arm = min_per_arm;
      opt.noise_sd = noise_sd;
      opt.propensity = parse_pi_known(pi_known);
      opt.nuisance.n_trees = nuisance_trees;
      opt.nuisance.mtry = nuisance_mtry;
      opt.nuisance.honest = nuisance_honest;
      for (auto p : grid.p_values) opt.nuisance.validate(p);
      opt.threads = threads;
      opt.timing = !no_timing;
      if (trees < 1) throw hte::ArgumentError("--trees must be >= 1");
      if (min_per_arm < 1) throw hte::ArgumentError("--min-per-arm must be >= 1");
      if (!(noise_sd > 0.0)) throw hte::ArgumentError("--noise-sd must be > 0");

      Output out(run_out);
      if (!quiet)
        std::fprintf(stderr, "htebench: %zu fits in %zu jobs on %u threads\n", hte::grid_fit_count(grid),
                     hte::grid_cells(grid).size() * grid.reps, hte::resolve_threads(threads));
      auto results = hte::run_grid(grid, opt, [&](std::size_t done, std::size_t total) {
        if (!quiet) std::fprintf(stderr, "  replication %zu/%zu\n", done, total);
      });
      for (const auto& r : results)
        if (!r.mse)
          std::fprintf(stderr, "htebench: warning: setup %c n=%zu p=%zu %s rep %zu failed: %s\n", hte::to_char(r.setup),
                       r.n, r.p, std::string(hte::to_string(r.variant)).c_str(), r.rep, r.error.c_str());
      hte::write_results_csv(out.stream(), results);
      out.close();
      return 0;
    }

    if (*summarize) {
      std::vector<hte::ComparisonPair> cmp;
      if (pairs.empty()) cmp = hte::default_pairs();
      for (const auto& s : split_list(pairs)) cmp.push_back(hte::parse_pair(s));
      hte::SummaryOptions sopt{bootstrap, level, sum_seed};
      auto results = read_results(sum_in);
      Output out(sum_out);
      std::vector<std::string> warnings;
      auto rows = hte::summarize_ratios(results, cmp, sopt, &warnings);
      for (const auto& w : warnings) std::fprintf(stderr, "htebench: warning: %s\n", w.c_str());
      hte::write_summary_csv(out.stream(), rows);
      out.close();
      return 0;
    }

    if (*plan) {
      hte::ExperimentGrid grid = plan_grid.grid();
      auto model = hte::fit_runtime_model(read_results(plan_in));
      const double total_ms = hte::extrapolate_runtime_ms(model, grid);
      const double wall_s = total_ms / 1000.0 / static_cast<double>(std::max(1u, plan_threads));
      std::printf("fits %zu\n", hte::grid_fit_count(grid));
      std::printf("slope_ms_per_np %.6g\n", model.pooled_slope);
      std::printf("total_cpu_hours %.3f\n", total_ms / 3.6e6);
      std::printf("wall_hours %.3f (threads %u)\n", wall_s / 3600.0, std::max(1u, plan_threads));
      return 0;
    }

    if (*simulate) {
      Output out(sim_out);
      hte::write_sample_csv(out.stream(), hte::generate(sim.spec()));
      out.close();
      return 0;
    }

    if (*nuisance) {
      const hte::DgpSpec spec = nsim.spec();
      const hte::SimulatedSample s = hte::generate(spec);
      hte::RegressionForestConfig cfg;
      cfg.n_trees = nu_trees;
      cfg.threads = nu_threads;
      Output out(nu_out);
      auto nu = hte::compute_centering(s, hte::Variant::cf, std::nullopt, cfg, spec.seed);
      hte::write_nuisance_csv(out.stream(), nu, s);
      out.close();
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "htebench: %s\n", e.what());
    return 1;
  } catch (const hte::ArgumentError& e) {
    std::fprintf(stderr, "htebench: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "htebench: %s\n", e.what());
    return 2;
  }
  return 0;
}
