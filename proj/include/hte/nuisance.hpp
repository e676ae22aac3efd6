#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <ostream>
#include <span>

#include "hte/dgp.hpp"
#include "hte/regression_forest.hpp"
#include "hte/variant.hpp"

namespace hte {

enum class PropensityMode { none, estimated, known };

inline constexpr double kPropensityFloor = 0.01;
inline constexpr double kPropensityCeil = 0.99;

struct NuisanceEstimates {
  Eigen::VectorXd m_hat;   // out-of-bag E(Y|X) at training rows, zeros if unused
  Eigen::VectorXd pi_hat;  // out-of-bag E(W|X) clipped to [0.01, 0.99], constant if known, zeros if unused
  PropensityMode pi_mode = PropensityMode::none;
  double pi_constant = 0.0;        // meaningful when pi_mode == known
  std::size_t oob_fallbacks = 0;   // rows with no out-of-bag tree in either fit
};

/// y - m_hat and w - pi_hat.
struct CenteredData {
  Eigen::VectorXd y;
  Eigen::VectorXd w;
};

inline CenteredData center(const SimulatedSample& s, const NuisanceEstimates& nu) {
  return {s.y - nu.m_hat, s.w - nu.pi_hat};
}

namespace detail {

inline Eigen::VectorXd oob_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& target,
                               const RegressionForestConfig& cfg, std::uint64_t seed, std::size_t& fallbacks) {
  RegressionForest forest =
      fit_regression_forest(X, std::span<const double>(target.data(), static_cast<std::size_t>(target.size())), cfg, seed);
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    OobPrediction p = forest.oob_predict(X, static_cast<std::size_t>(i));
    out[i] = p.value;
    if (p.fallback) ++fallbacks;
  }
  return out;
}

}  // namespace detail

/// Out-of-bag fit of y on X (seed stream nuisance_outcome).
inline Eigen::VectorXd fit_outcome_nuisance(const SimulatedSample& sample, const RegressionForestConfig& cfg,
                                            std::uint64_t seed, std::size_t* fallbacks = nullptr) {
  std::size_t fb = 0;
  Eigen::VectorXd m = detail::oob_fit(sample.X, sample.y, cfg, derive_seed(seed, Stream::nuisance_outcome), fb);
  if (fallbacks) *fallbacks += fb;
  return m;
}

/// Out-of-bag fit of w on X (seed stream nuisance_treatment), clipped to [0.01, 0.99].
inline Eigen::VectorXd fit_propensity_nuisance(const SimulatedSample& sample, const RegressionForestConfig& cfg,
                                               std::uint64_t seed, std::size_t* fallbacks = nullptr) {
  std::size_t fb = 0;
  Eigen::VectorXd pi = detail::oob_fit(sample.X, sample.w, cfg, derive_seed(seed, Stream::nuisance_treatment), fb)
                           .cwiseMax(kPropensityFloor)
                           .cwiseMin(kPropensityCeil);
  if (fallbacks) *fallbacks += fb;
  return pi;
}

/// Nuisance estimates needed by `variant`:
///   cf, mobWY, mobcf : m_hat and pi_hat
///   mobW             : pi_hat only (m_hat = 0)
///   mob              : neither (both 0)
/// pi_known replaces the propensity fit by a constant. The two fits draw from
/// separate substreams of `seed`, so variants fitted with the same seed share
/// identical estimates.
inline NuisanceEstimates compute_centering(const SimulatedSample& sample, Variant variant,
                                           std::optional<double> pi_known, const RegressionForestConfig& cfg,
                                           std::uint64_t seed) {
  if (pi_known && !(*pi_known > 0.0 && *pi_known < 1.0))
    throw ArgumentError("pi_known must lie strictly inside (0, 1)");
  const auto n = static_cast<Eigen::Index>(sample.n());
  NuisanceEstimates nu;
  nu.m_hat = Eigen::VectorXd::Zero(n);
  nu.pi_hat = Eigen::VectorXd::Zero(n);

  if (centers_outcome(variant)) nu.m_hat = fit_outcome_nuisance(sample, cfg, seed, &nu.oob_fallbacks);

  if (centers_treatment(variant)) {
    if (pi_known) {
      nu.pi_mode = PropensityMode::known;
      nu.pi_constant = *pi_known;
      nu.pi_hat = Eigen::VectorXd::Constant(n, *pi_known);
    } else {
      nu.pi_mode = PropensityMode::estimated;
      nu.pi_hat = fit_propensity_nuisance(sample, cfg, seed, &nu.oob_fallbacks);
    }
  }
  return nu;
}

/// Restrict a full set of estimates to what `variant` uses. Lets one full fit
/// be shared across variants of a replication.
inline NuisanceEstimates restrict_to(const NuisanceEstimates& full, Variant variant) {
  NuisanceEstimates nu = full;
  const auto n = full.m_hat.size();
  if (!centers_outcome(variant)) nu.m_hat = Eigen::VectorXd::Zero(n);
  if (!centers_treatment(variant)) {
    nu.pi_hat = Eigen::VectorXd::Zero(n);
    nu.pi_mode = PropensityMode::none;
    nu.pi_constant = 0.0;
  }
  return nu;
}

/// Diagnostic CSV: row,m_hat,pi_hat,true_pi.
inline void write_nuisance_csv(std::ostream& os, const NuisanceEstimates& nu, const SimulatedSample& s) {
  os.precision(17);
  os << "row,m_hat,pi_hat,true_pi\n";
  for (Eigen::Index i = 0; i < nu.m_hat.size(); ++i)
    os << i << ',' << nu.m_hat[i] << ',' << nu.pi_hat[i] << ',' << s.true_pi[i] << '\n';
}

}  // namespace hte
