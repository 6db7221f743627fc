#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace lmrasch {

// Bad shapes, out-of-range indices, non-finite inputs.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Global logits that are not strictly decreasing; only reachable if a caller
// builds parameters by hand that break the ordering constraints.
struct ConstraintViolation : std::domain_error {
  using std::domain_error::domain_error;
};

struct InvalidDesign : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct MStepFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A constrained refit ended above the unconstrained optimum, so the
// unconstrained fit was not the global maximum.
struct NonNestedOptimum : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitFailure : std::runtime_error {
  FitFailure(const std::string& what, std::vector<std::string> per_start)
      : std::runtime_error(what), diagnostics(std::move(per_start)) {}
  std::vector<std::string> diagnostics;
};

// Input file problems. line/column are 1-based; 0 means "whole file".
struct LoadError : std::runtime_error {
  LoadError(std::string file_, std::size_t line_, std::size_t column_, const std::string& msg)
      : std::runtime_error(format(file_, line_, column_, msg)),
        file(std::move(file_)), line(line_), column(column_) {}

  std::string file;
  std::size_t line;
  std::size_t column;

 private:
  static std::string format(const std::string& f, std::size_t l, std::size_t c,
                            const std::string& m) {
    std::string out = f;
    if (l > 0) out += ":" + std::to_string(l);
    if (c > 0) out += ":" + std::to_string(c);
    return out + ": " + m;
  }
};

}  // namespace lmrasch
