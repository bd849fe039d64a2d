#pragma once

#include <string>
#include <vector>

#include "nast/common.hpp"
#include "nast/stream.hpp"

namespace nast {

// Read/write schedule of one sentence: g[t] = source tokens read when output
// token t+1 was emitted.
struct PolicyRecord {
  Index src_len = 0;
  std::vector<Index> g;
};

PolicyRecord policy_from_trace(const ReadWriteTrace& trace);

struct LatencyReport {
  double al = 0;   // average lagging up to the cutoff
  double ap = 0;   // average proportion
  double cw = 0;   // mean read-burst length
  double dal = 0;  // differentiable average lagging
};

// clamp_cutoff: when g never reaches src_len (the contract violation case),
// fall back to cutoff = |y| instead of throwing.
LatencyReport latency_metrics(const PolicyRecord& p, bool clamp_cutoff = false);

using Tokens = std::vector<std::string>;

// Corpus-level 4-gram BLEU in [0,100] with brevity penalty; add-one
// smoothing on the n>=2 precisions.
double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

// Fraction of hypothesis tokens (1-based target positions) with no incident link.
double hallucination_rate(Index hyp_len, const AlignmentLinks& links);

// Number of link pairs in inverted order: (t-t')(s-s') < 0.
Index cross_count(const AlignmentLinks& links);

struct DifficultyPartition {
  std::vector<Index> easy, medium, hard;  // sentence indices, corpus order preserved
};

// Sort sentences by cross count (stable, ties keep corpus order) and split
// into thirds; a remainder goes to the earlier groups.
DifficultyPartition partition_by_difficulty(const std::vector<AlignmentLinks>& corpus);

}  // namespace nast
