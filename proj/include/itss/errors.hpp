#pragma once

#include <stdexcept>
#include <string>

namespace itss {

// Shape/dimension disagreement between inputs.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, zero vectors where a direction is required, etc.
struct InvalidInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A requested subspace dimension exceeds the numerical rank of the data.
struct RankDeficientError : std::runtime_error {
  RankDeficientError(const std::string& what, std::size_t achievable)
      : std::runtime_error(what), achievable_rank(achievable) {}
  std::size_t achievable_rank;
};

// Training loss went non-finite or above the divergence bound.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corrupt, truncated or unsupported artifact files.
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace itss
