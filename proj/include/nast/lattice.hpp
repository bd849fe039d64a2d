#pragma once

#include <span>
#include <utility>
#include <vector>

#include "nast/autodiff.hpp"
#include "nast/tensor.hpp"

namespace nast {

// Token id 0 is the blank symbol everywhere.
inline constexpr Index kBlankId = 0;

// Per-position categorical log-distributions over the blank-extended
// vocabulary, one row per alignment slot, with the decode geometry attached.
struct AlignmentPosterior {
  Array log_probs;  // [T, V]
  Index upsample = 1;
  Index wait_k = 0;
  Index src_len = 0;

  Index length() const { return log_probs.rows(); }
  Index vocab() const { return log_probs.cols(); }
  // Rows must log-normalize to 0 within tol.
  void validate(double tol = 1e-5) const;
};

// Merge maximal runs of equal non-blank tokens, then drop blanks.
std::vector<Index> collapse(std::span<const Index> alignment);

// Log marginal probability that a position-factorized alignment collapses to
// y. Returns -inf when no alignment of this length can produce y.
double ctc_log_prob(std::span<const Index> y, const Array& log_probs);

struct CtcGrad {
  double log_prob;
  Array d_log_probs;
};
CtcGrad ctc_log_prob_with_grad(std::span<const Index> y, const Array& log_probs);

// Most probable alignment collapsing to y. Ties are broken deterministically:
// the final lattice state prefers the trailing-blank state, and among equal
// predecessors the higher state index wins, so tokens are placed as early as
// possible with blanks trailing. Throws InfeasibleAlignment when y cannot be
// produced.
std::vector<Index> viterbi_alignment(std::span<const Index> y, const Array& log_probs);

// Expected number of adjacent (first, second) occurrences in the collapsed
// output, accumulated over all alignments in closed form. Bigram tokens must
// be non-blank.
std::vector<double> expected_bigram_counts(std::span<const std::pair<Index, Index>> bigrams,
                                           const Array& log_probs);

struct BigramTable {
  struct Entry {
    Index first = 0;
    Index second = 0;
    double target_count = 0.0;    // occurrences in y
    double expected_count = 0.0;  // model expectation
  };
  std::vector<Entry> entries;  // distinct bigrams of y, first-appearance order
};
BigramTable bigram_table(std::span<const Index> y, const Array& log_probs);

// Negative clipped bigram F-measure between y's bigram counts and the model's
// expected counts. Range [-1, 0]; requires |y| >= 2 (DegenerateTarget
// otherwise).
double nmla_loss(std::span<const Index> y, const Array& log_probs);

struct NmlaGrad {
  double loss;
  Array d_log_probs;
};
NmlaGrad nmla_loss_with_grad(std::span<const Index> y, const Array& log_probs);

// Probability that position i starts a new collapsed token: non-blank and not
// a same-token continuation of position i-1.
std::vector<double> reservation_probs(const Array& log_probs);

inline constexpr double kLagDenomFloor = 1e-6;

// Differentiable expected average lagging over the alignment distribution.
// Positions of the final source step are excluded from the cut-off sum.
// Requires src_len >= 2 (DegenerateInput) and rows == upsample * src_len.
double expected_al(const Array& log_probs, Index upsample, Index wait_k, Index src_len);

// max(expected_al, min_lag); gradient is zero in the clamped regime.
double latency_loss(const Array& log_probs, Index upsample, Index wait_k, Index src_len,
                    double min_lag);

struct LatencyGrad {
  double loss;
  double al;
  Array d_log_probs;
};
LatencyGrad latency_loss_with_grad(const Array& log_probs, Index upsample, Index wait_k,
                                   Index src_len, double min_lag);

// Tape wrappers with hand-derived backward passes.
Var ctc_log_prob_op(Tape& tape, Var log_probs, std::vector<Index> y);
Var nmla_loss_op(Tape& tape, Var log_probs, std::vector<Index> y);
Var latency_loss_op(Tape& tape, Var log_probs, Index upsample, Index wait_k, Index src_len,
                    double min_lag);

}  // namespace nast
