#pragma once

#include <stdexcept>
#include <string>

namespace forge {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Case file could not be tokenized / wrong column counts.
struct MalformedCase : Error {
  using Error::Error;
};
// Parsed fine but violates model invariants (dangling bus ids, slack issues).
struct InconsistentCase : Error {
  using Error::Error;
};
struct IslandedNetwork : Error {
  using Error::Error;
};
struct NoSlackGenerator : Error {
  using Error::Error;
};
struct UnconvergedInput : Error {
  using Error::Error;
};
struct IllFormedProgram : Error {
  using Error::Error;
};
struct BackendUnavailable : Error {
  using Error::Error;
};
struct SolverFailure : Error {
  using Error::Error;
};
struct BoundDomainError : Error {
  using Error::Error;
};
struct EmptyFeasibleSet : Error {
  using Error::Error;
};
struct EmptyPolytope : Error {
  using Error::Error;
};
struct DegeneratePolytope : Error {
  using Error::Error;
};
struct NlpFailure : Error {
  using Error::Error;
};
struct TooFewPoints : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace forge
