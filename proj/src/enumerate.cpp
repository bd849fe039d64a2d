#include "nast/enumerate.hpp"

#include <algorithm>
#include <cmath>

namespace nast {

namespace {

void check_cap(Index vocab, Index time) {
  check_arg(vocab >= 1 && time >= 0, "enumeration: bad posterior shape");
  if (std::pow(static_cast<double>(vocab), static_cast<double>(time)) > kEnumerationCap)
    throw CapacityError("enumeration would exceed the |V|^T cap");
}

// Literal definition: merge runs of equal tokens, then drop blanks.
std::vector<Index> collapse_by_definition(const std::vector<Index>& a) {
  std::vector<Index> merged;
  for (Index tok : a)
    if (merged.empty() || merged.back() != tok) merged.push_back(tok);
  std::vector<Index> out;
  for (Index tok : merged)
    if (tok != kBlankId) out.push_back(tok);
  return out;
}

Index count_adjacent(const std::vector<Index>& seq, std::pair<Index, Index> g) {
  Index n = 0;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i)
    if (seq[i] == g.first && seq[i + 1] == g.second) ++n;
  return n;
}

template <class Fn>
void for_each_alignment(const Array& probs, Fn&& fn) {
  const Index T = probs.rows(), V = probs.cols();
  std::vector<Index> a(static_cast<std::size_t>(T), 0);
  if (T == 0) {
    fn(a, 1.0);
    return;
  }
  while (true) {
    double pr = 1.0;
    for (Index t = 0; t < T; ++t) pr *= probs.at(t, a[static_cast<std::size_t>(t)]);
    fn(a, pr);
    Index t = T - 1;
    while (t >= 0) {
      if (++a[static_cast<std::size_t>(t)] < V) break;
      a[static_cast<std::size_t>(t)] = 0;
      --t;
    }
    if (t < 0) break;
  }
}

}  // namespace

OracleQueries enumerate_oracle(const AlignmentPosterior& posterior, std::span<const Index> y,
                               std::pair<Index, Index> bigram) {
  const Array& lp = posterior.log_probs;
  check_cap(lp.cols(), lp.rows());
  Array probs = lp;
  for (Index i = 0; i < probs.numel(); ++i) probs[i] = std::exp(probs[i]);

  const Index upsample = posterior.upsample, k = posterior.wait_k, m = posterior.src_len;
  const Index bound = std::min(lp.rows(), m >= 1 ? (m - 1) * upsample : 0);
  std::vector<Index> target(y.begin(), y.end());

  OracleQueries out;
  for_each_alignment(probs, [&](const std::vector<Index>& a, double pr) {
    const std::vector<Index> cut = collapse_by_definition(a);
    if (cut == target) {
      out.marginal += pr;
      if (pr > out.best_prob) {
        out.best_prob = pr;
        out.best_alignment = a;
      }
    }
    out.bigram_count += pr * static_cast<double>(count_adjacent(cut, bigram));
    double tau = 0.0, mass = 0.0;
    for (Index i = 0; i < bound; ++i) {
      const Index tok = a[static_cast<std::size_t>(i)];
      const bool reserved =
          tok != kBlankId && (i == 0 || tok != a[static_cast<std::size_t>(i - 1)]);
      if (reserved) {
        tau += 1.0;
        mass += static_cast<double>(std::min(i / upsample + 1 + k, m));
      }
    }
    out.expected_tau += pr * tau;
    out.expected_moment_mass += pr * mass;
  });
  return out;
}

std::map<std::vector<Index>, double> enumerate_marginals(const AlignmentPosterior& posterior) {
  const Array& lp = posterior.log_probs;
  check_cap(lp.cols(), lp.rows());
  Array probs = lp;
  for (Index i = 0; i < probs.numel(); ++i) probs[i] = std::exp(probs[i]);
  std::map<std::vector<Index>, double> out;
  for_each_alignment(probs, [&](const std::vector<Index>& a, double pr) {
    out[collapse_by_definition(a)] += pr;
  });
  return out;
}

}  // namespace nast
