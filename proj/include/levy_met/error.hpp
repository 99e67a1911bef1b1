#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace levy_met {

enum class ErrorKind {
  domain,         // argument outside the mathematical domain (support, log(1+u))
  tolerance,      // quadrature or iteration did not reach the requested accuracy
  configuration,  // inconsistent options or unsimulable setup
  structural,     // mismatched dimensions, types or origins
  range,          // time outside the sampled horizon
  singularity,    // non-invertible matrix or jump factor
  instability,    // overflow or frame degeneration
  divergence,     // Picard iteration diverging
  resolution,     // spectrum / flag not resolvable at this horizon or tolerance
  parse,          // config text errors
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::tolerance: return "tolerance";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::structural: return "structural";
    case ErrorKind::range: return "range";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::instability: return "instability";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::parse: return "parse";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const char* message) {
  if (!condition) fail(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace levy_met
