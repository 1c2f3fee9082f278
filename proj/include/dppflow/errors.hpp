#pragma once

#include <stdexcept>
#include <string>

namespace dppflow {

enum class ErrorKind {
  invalid_input,    // malformed arguments (non-finite values, shape mismatch)
  degenerate_input, // input valid in shape but degenerate (no off-diagonal entries, zero bandwidth)
  singular_kernel,  // kernel not positive definite even after the jitter policy
  numeric,          // non-finite propagation, solver non-convergence, training divergence
  version,          // checkpoint schema mismatch
  config,           // config file / flag validation failure
  io,               // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // CLI contract: 0 success, 2 config error, 3 numeric failure, 4 IO.
  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::config:
      case ErrorKind::invalid_input:
      case ErrorKind::version:
        return 2;
      case ErrorKind::io:
        return 4;
      default:
        return 3;
    }
  }

 private:
  ErrorKind kind_;
};

}  // namespace dppflow
