#pragma once

// Synthetic data for four benchmark setups with known propensity, prognostic
// and treatment-effect functions. Covariates are indexed 1-based in the
// formulas below (x1 == x[0]); every column beyond those a setup reads is noise.

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hte/errors.hpp"
#include "hte/random.hpp"

namespace hte {

enum class Setup { A, B, C, D };

inline char to_char(Setup s) { return static_cast<char>('A' + static_cast<int>(s)); }

inline Setup parse_setup(std::string_view s) {
  if (s.size() == 1) {
    char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (c >= 'A' && c <= 'D') return static_cast<Setup>(c - 'A');
  }
  throw ArgumentError("unknown setup '" + std::string(s) + "' (expected A, B, C or D)");
}

struct DgpSpec {
  Setup setup = Setup::A;
  std::size_t n = 800;
  std::size_t p = 10;
  double noise_sd = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1) throw ArgumentError("n must be >= 1");
    if (p < 5) throw ArgumentError("p must be >= 5");
    if (!(noise_sd > 0.0)) throw ArgumentError("noise_sd must be > 0");
  }
};

struct SimulatedSample {
  Eigen::MatrixXd X;  // n x p, column-major
  Eigen::VectorXd w;  // 0/1
  Eigen::VectorXd y;
  Eigen::VectorXd true_pi;
  Eigen::VectorXd true_tau;
  Eigen::VectorXd true_mu;

  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
};

namespace detail {

inline void require_length(std::span<const double> x, std::size_t need, const char* what) {
  if (x.size() < need)
    throw ArgumentError(std::string(what) + ": covariate vector needs at least " + std::to_string(need) +
                        " entries, got " + std::to_string(x.size()));
}

inline double softplus(double t) {
  // log(1 + e^t) without overflow for large t
  return t > 30.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

}  // namespace detail

inline double propensity(Setup setup, std::span<const double> x) {
  detail::require_length(x, 3, "propensity");
  const double x1 = x[0], x2 = x[1], x3 = x[2];
  switch (setup) {
    case Setup::A: return std::max(0.1, std::min(std::sin(std::numbers::pi * x1 * x2), 0.9));
    case Setup::B: return 0.5;
    case Setup::C: return 1.0 / (1.0 + std::exp(x2 + x3));
    case Setup::D: return 1.0 / (1.0 + std::exp(-x1) + std::exp(-x2));
  }
  return 0.5;
}

inline double cate(Setup setup, std::span<const double> x) {
  detail::require_length(x, 5, "cate");
  switch (setup) {
    case Setup::A: return (x[0] + x[1]) / 2.0;
    case Setup::B: return x[0] + detail::softplus(x[1]);
    case Setup::C: return 1.0;
    case Setup::D: return std::max(x[0] + x[1] + x[2], 0.0) - std::max(x[3] + x[4], 0.0);
  }
  return 0.0;
}

inline double prognostic(Setup setup, std::span<const double> x) {
  detail::require_length(x, 5, "prognostic");
  switch (setup) {
    case Setup::A:
      return std::sin(std::numbers::pi * x[0] * x[1]) + 2.0 * (x[2] - 0.5) * (x[2] - 0.5) + x[3] + 0.5 * x[4];
    case Setup::B: return std::max({x[0] + x[1], x[2], 0.0}) + std::max(x[3] + x[4], 0.0);
    case Setup::C: return 2.0 * detail::softplus(x[0] + x[1] + x[2]);
    case Setup::D: return (std::max(x[0] + x[1] + x[2], 0.0) + std::max(x[3] + x[4], 0.0)) / 2.0;
  }
  return 0.0;
}

/// Setup A: U[0,1]; others: N(0,1). Filled row by row so that a prefix of
/// rows is independent of n.
inline Eigen::MatrixXd sample_covariates(const DgpSpec& spec, Rng& rng) {
  spec.validate();
  Eigen::MatrixXd X(spec.n, spec.p);
  for (std::size_t i = 0; i < spec.n; ++i)
    for (std::size_t j = 0; j < spec.p; ++j)
      X(i, j) = spec.setup == Setup::A ? rng.uniform() : rng.normal();
  return X;
}

/// Covariates, treatment and noise come from independent substreams of
/// spec.seed (Stream::covariates / treatment / noise).
inline SimulatedSample generate(const DgpSpec& spec) {
  spec.validate();
  Rng cov_rng(derive_seed(spec.seed, Stream::covariates));
  Rng trt_rng(derive_seed(spec.seed, Stream::treatment));
  Rng noise_rng(derive_seed(spec.seed, Stream::noise));

  SimulatedSample s;
  s.X = sample_covariates(spec, cov_rng);
  const auto n = static_cast<Eigen::Index>(spec.n);
  s.w.resize(n);
  s.y.resize(n);
  s.true_pi.resize(n);
  s.true_tau.resize(n);
  s.true_mu.resize(n);
  std::vector<double> row(spec.p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < spec.p; ++j) row[j] = s.X(i, static_cast<Eigen::Index>(j));
    const double pi = propensity(spec.setup, row);
    const double tau = cate(spec.setup, row);
    const double mu = prognostic(spec.setup, row);
    const double w = trt_rng.bernoulli(pi) ? 1.0 : 0.0;
    s.true_pi[i] = pi;
    s.true_tau[i] = tau;
    s.true_mu[i] = mu;
    s.w[i] = w;
    s.y[i] = mu + tau * (w - 0.5) + spec.noise_sd * noise_rng.normal();
  }
  return s;
}

/// True CATE for each row of X.
inline Eigen::VectorXd true_cate(Setup setup, const Eigen::MatrixXd& X) {
  Eigen::VectorXd tau(X.rows());
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(i, j);
    tau[i] = cate(setup, row);
  }
  return tau;
}

/// CSV with header x1..xp,w,y,pi,tau,mu.
inline void write_sample_csv(std::ostream& os, const SimulatedSample& s) {
  os.precision(17);
  for (std::size_t j = 0; j < s.p(); ++j) os << 'x' << (j + 1) << ',';
  os << "w,y,pi,tau,mu\n";
  for (Eigen::Index i = 0; i < s.X.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.X.cols(); ++j) os << s.X(i, j) << ',';
    os << s.w[i] << ',' << s.y[i] << ',' << s.true_pi[i] << ',' << s.true_tau[i] << ',' << s.true_mu[i] << '\n';
  }
}

}  // namespace hte
