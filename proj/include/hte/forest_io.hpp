#pragma once

// Text serialization of a fitted HteForest, format version 1.
//
//   hte-forest 1
//   variant <cf|mob|mobw|mobwy|mobcf>
//   config <n_trees> <min_per_arm> <mtry> <subsample_fraction> <honest 0|1> <max_depth|-1> <seed> <leaf|count>
//   data <n> <p>
//   <n lines>  x_1 .. x_p y w m_hat pi_hat
//   nuisance <none|estimated|known> <pi_constant> <oob_fallbacks>
//   trees <T>
//   tree <node_count> <build_count> <estimation_count>
//   build <indices...>
//   estimation <indices...>
//   <node_count lines>  <var> <cut> <left> <right> <row_count> <rows...>
//   end
//
// Reals are written with 17 significant digits, so a reload reproduces every
// double exactly and predictions are bit-identical.

#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "hte/errors.hpp"
#include "hte/forest.hpp"

namespace hte {

inline constexpr int kForestFormatVersion = 1;

inline void save_forest(std::ostream& os, const HteForest& forest) {
  const auto& cfg = forest.config();
  const auto& d = forest.data();
  const auto& nu = forest.nuisance();
  os.precision(17);
  os << "hte-forest " << kForestFormatVersion << '\n';
  os << "variant " << to_string(cfg.variant) << '\n';
  os << "config " << cfg.n_trees << ' ' << cfg.min_per_arm << ' ' << cfg.mtry << ' ' << cfg.subsample_fraction << ' '
     << (cfg.honest ? 1 : 0) << ' ' << (cfg.max_depth ? static_cast<long long>(*cfg.max_depth) : -1LL) << ' '
     << cfg.seed << ' ' << (cfg.weights == WeightScheme::leaf_normalized ? "leaf" : "count") << '\n';
  os << "data " << d.n() << ' ' << d.p() << '\n';
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) os << d.X(i, j) << ' ';
    os << d.y[i] << ' ' << d.arm[i] << ' ' << nu.m_hat[i] << ' ' << nu.pi_hat[i] << '\n';
  }
  const char* mode = nu.pi_mode == PropensityMode::none ? "none" : nu.pi_mode == PropensityMode::known ? "known" : "estimated";
  os << "nuisance " << mode << ' ' << nu.pi_constant << ' ' << nu.oob_fallbacks << '\n';
  os << "trees " << forest.trees().size() << '\n';
  for (const auto& t : forest.trees()) {
    os << "tree " << t.nodes.size() << ' ' << t.build_rows.size() << ' ' << t.estimation_rows.size() << '\n';
    os << "build";
    for (auto r : t.build_rows) os << ' ' << r;
    os << "\nestimation";
    for (auto r : t.estimation_rows) os << ' ' << r;
    os << '\n';
    for (const auto& nd : t.nodes) {
      os << nd.var << ' ' << nd.cut << ' ' << nd.left << ' ' << nd.right << ' ' << nd.rows.size();
      for (auto r : nd.rows) os << ' ' << r;
      os << '\n';
    }
  }
  os << "end\n";
}

namespace detail {

inline void expect_token(std::istream& is, const std::string& want) {
  std::string tok;
  if (!(is >> tok) || tok != want) throw FormatError("forest file: expected '" + want + "', got '" + tok + "'");
}

template <class T>
T read_value(std::istream& is, const char* what) {
  T v{};
  if (!(is >> v)) throw FormatError(std::string("forest file: cannot read ") + what);
  return v;
}

}  // namespace detail

inline HteForest load_forest(std::istream& is) {
  using detail::expect_token;
  using detail::read_value;
  expect_token(is, "hte-forest");
  const int version = read_value<int>(is, "version");
  if (version != kForestFormatVersion) throw FormatError("forest file: unsupported version " + std::to_string(version));

  HteForestConfig cfg;
  expect_token(is, "variant");
  cfg.variant = parse_variant(read_value<std::string>(is, "variant"));
  expect_token(is, "config");
  cfg.n_trees = read_value<std::size_t>(is, "n_trees");
  cfg.min_per_arm = read_value<std::size_t>(is, "min_per_arm");
  cfg.mtry = read_value<std::size_t>(is, "mtry");
  cfg.subsample_fraction = read_value<double>(is, "subsample_fraction");
  cfg.honest = read_value<int>(is, "honest") != 0;
  const long long depth = read_value<long long>(is, "max_depth");
  if (depth >= 0) cfg.max_depth = static_cast<std::size_t>(depth);
  cfg.seed = read_value<std::uint64_t>(is, "seed");
  const std::string scheme = read_value<std::string>(is, "weights");
  if (scheme == "leaf") cfg.weights = WeightScheme::leaf_normalized;
  else if (scheme == "count") cfg.weights = WeightScheme::co_occurrence;
  else throw FormatError("forest file: unknown weight scheme " + scheme);

  expect_token(is, "data");
  const auto n = read_value<Eigen::Index>(is, "n");
  const auto p = read_value<Eigen::Index>(is, "p");
  if (n < 1 || p < 1) throw FormatError("forest file: bad data dimensions");
  SimulatedSample s;
  s.X.resize(n, p);
  s.y.resize(n);
  s.w.resize(n);
  NuisanceEstimates nu;
  nu.m_hat.resize(n);
  nu.pi_hat.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) s.X(i, j) = read_value<double>(is, "x");
    s.y[i] = read_value<double>(is, "y");
    s.w[i] = read_value<double>(is, "w");
    nu.m_hat[i] = read_value<double>(is, "m_hat");
    nu.pi_hat[i] = read_value<double>(is, "pi_hat");
  }
  expect_token(is, "nuisance");
  const std::string mode = read_value<std::string>(is, "pi_mode");
  nu.pi_mode = mode == "none" ? PropensityMode::none : mode == "known" ? PropensityMode::known : PropensityMode::estimated;
  if (mode != "none" && mode != "known" && mode != "estimated") throw FormatError("forest file: bad pi_mode " + mode);
  nu.pi_constant = read_value<double>(is, "pi_constant");
  nu.oob_fallbacks = read_value<std::size_t>(is, "oob_fallbacks");

  expect_token(is, "trees");
  const auto n_trees = read_value<std::size_t>(is, "tree count");
  std::vector<FittedTree> trees(n_trees);
  auto read_rows = [&](std::vector<std::uint32_t>& out, std::size_t count) {
    out.resize(count);
    for (auto& r : out) {
      r = read_value<std::uint32_t>(is, "row index");
      if (static_cast<Eigen::Index>(r) >= n) throw FormatError("forest file: row index out of range");
    }
  };
  for (auto& t : trees) {
    expect_token(is, "tree");
    const auto node_count = read_value<std::size_t>(is, "node count");
    const auto build_count = read_value<std::size_t>(is, "build count");
    const auto est_count = read_value<std::size_t>(is, "estimation count");
    if (node_count == 0) throw FormatError("forest file: tree without nodes");
    expect_token(is, "build");
    read_rows(t.build_rows, build_count);
    expect_token(is, "estimation");
    read_rows(t.estimation_rows, est_count);
    t.nodes.resize(node_count);
    for (std::size_t k = 0; k < node_count; ++k) {
      auto& nd = t.nodes[k];
      nd.var = read_value<std::int32_t>(is, "var");
      nd.cut = read_value<double>(is, "cut");
      nd.left = read_value<std::int32_t>(is, "left");
      nd.right = read_value<std::int32_t>(is, "right");
      read_rows(nd.rows, read_value<std::size_t>(is, "leaf size"));
      if (nd.var >= p) throw FormatError("forest file: split variable out of range");
      if (nd.var >= 0 && (nd.left <= static_cast<std::int32_t>(k) || nd.right <= static_cast<std::int32_t>(k) || static_cast<std::size_t>(nd.left) >= node_count ||
                          static_cast<std::size_t>(nd.right) >= node_count))
        throw FormatError("forest file: child index out of range");
    }
  }
  expect_token(is, "end");
  ModelData data = make_model_data(s, nu);
  return HteForest(cfg, std::move(data), std::move(nu), std::move(trees));
}

}  // namespace hte
