#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "nast/common.hpp"

namespace nast {

struct SuiteReport {
  Index instances = 0;  // randomized instances completed
  Index checks = 0;     // individual comparisons inside them
  Index failures = 0;
  Index retries = 0;  // instances resampled around non-smooth probe points
  double worst_err = 0.0;
  std::string worst_case;

  bool pass() const { return failures == 0; }
};

// Dynamic-programming / closed-form results vs exhaustive enumeration:
// alignment marginals, expected bigram counts, reservation sums, best
// alignments, and the collapse-output partition of unity.
SuiteReport run_oracle_suite(Index instances, double tol, std::uint64_t seed,
                             const std::function<void(const std::string&)>& progress = nullptr);

// Analytic gradients vs central differences: the lattice losses over raw
// posteriors and the full network paths (alignment, bigram, and lag losses
// through the transformer to every parameter class).
SuiteReport run_grad_suite(Index instances, double tol, std::uint64_t seed,
                           const std::function<void(const std::string&)>& progress = nullptr);

}  // namespace nast
