#pragma once

#include <stdexcept>
#include <string>

namespace hte {

/// Invalid input to a public operation (bad sizes, out-of-range parameters).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The treatment column has no variation inside a node.
class NoVariation : public std::runtime_error {
 public:
  NoVariation() : std::runtime_error("treatment column has no variation in node") {}
};

/// A weighted denominator or weight matrix is numerically zero.
class Degenerate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A query point reached only empty leaves.
class EmptyNeighborhood : public std::runtime_error {
 public:
  EmptyNeighborhood() : std::runtime_error("query point has no training neighbours in any tree") {}
};

/// Malformed file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hte
