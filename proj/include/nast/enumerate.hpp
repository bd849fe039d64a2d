#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "nast/lattice.hpp"

namespace nast {

// Hard cap on |V|^T for exhaustive enumeration.
inline constexpr double kEnumerationCap = 1e6;

// Exact quantities computed by brute force over every alignment, used as the
// reference for the dynamic-programming and closed-form paths. Everything
// here works from first definitions only: per-position products, literal
// run-merge collapse, literal reservation indicators.
struct OracleQueries {
  double marginal = 0.0;       // total probability of alignments collapsing to y
  double bigram_count = 0.0;   // expected adjacent (g1,g2) count in the collapsed output
  double expected_tau = 0.0;   // expected reserved positions before the final source step
  double expected_moment_mass = 0.0;  // same sum weighted by each position's read count
  std::vector<Index> best_alignment;  // most probable member of the collapse preimage of y
  double best_prob = 0.0;
};

OracleQueries enumerate_oracle(const AlignmentPosterior& posterior, std::span<const Index> y,
                               std::pair<Index, Index> bigram);

// Probability of each distinct collapsed output, by enumeration.
std::map<std::vector<Index>, double> enumerate_marginals(const AlignmentPosterior& posterior);

}  // namespace nast
