#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>

#include "hte/errors.hpp"

namespace hte {

/// The five forest variants.
///  - cf     : outcome and treatment centered, tau-only local model, CART split on pseudo-outcomes
///  - mob    : no centering, bivariate (intercept, effect) model
///  - mobW   : treatment centered, bivariate model
///  - mobWY  : treatment and outcome centered, bivariate model
///  - mobcf  : treatment and outcome centered, tau-only model, model-based splitting
enum class Variant { cf, mob, mobW, mobWY, mobcf };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::cf, Variant::mob, Variant::mobW,
                                                     Variant::mobWY, Variant::mobcf};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::cf: return "cf";
    case Variant::mob: return "mob";
    case Variant::mobW: return "mobw";
    case Variant::mobWY: return "mobwy";
    case Variant::mobcf: return "mobcf";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Variant v : kAllVariants)
    if (lower == to_string(v)) return v;
  throw ArgumentError("unknown variant '" + std::string(s) + "'");
}

/// Variant centers the outcome by the marginal-mean estimate.
constexpr bool centers_outcome(Variant v) {
  return v == Variant::cf || v == Variant::mobWY || v == Variant::mobcf;
}

/// Variant centers the treatment indicator by the propensity estimate.
constexpr bool centers_treatment(Variant v) { return v != Variant::mob; }

/// Local model is tau-only (no intercept); otherwise (intercept, tau).
constexpr bool tau_only(Variant v) { return v == Variant::cf || v == Variant::mobcf; }

}  // namespace hte
