#include "nast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace nast {

PolicyRecord policy_from_trace(const ReadWriteTrace& trace) {
  PolicyRecord p;
  p.src_len = trace.read_count();
  p.g = trace.write_g();
  return p;
}

namespace {

void validate_policy(const PolicyRecord& p) {
  check_arg(p.src_len >= 1, "latency_metrics: empty source");
  check_arg(!p.g.empty(), "latency_metrics: empty schedule");
  Index prev = 0;
  for (Index gt : p.g) {
    check_arg(gt >= 1 && gt <= p.src_len, "latency_metrics: g out of range");
    check_arg(gt >= prev, "latency_metrics: g must be non-decreasing");
    prev = gt;
  }
}

}  // namespace

LatencyReport latency_metrics(const PolicyRecord& p, bool clamp_cutoff) {
  validate_policy(p);
  const Index n = static_cast<Index>(p.g.size());
  const double r = double(n) / double(p.src_len);

  Index cutoff = 0;
  for (Index t = 0; t < n; ++t) {
    if (p.g[t] == p.src_len) {
      cutoff = t + 1;
      break;
    }
  }
  if (cutoff == 0) {
    if (!clamp_cutoff) throw ContractViolation("latency_metrics: schedule never reads the full source");
    cutoff = n;
  }

  LatencyReport rep;
  for (Index t = 0; t < cutoff; ++t) rep.al += double(p.g[t]) - double(t) / r;
  rep.al /= double(cutoff);

  rep.ap = std::accumulate(p.g.begin(), p.g.end(), double(0)) / (double(p.src_len) * double(n));

  Index bursts = 0;
  Index prev = 0;
  for (Index gt : p.g) {
    if (gt > prev) ++bursts;
    prev = gt;
  }
  rep.cw = double(p.g.back()) / double(bursts);

  double gp = 0;
  for (Index t = 0; t < n; ++t) {
    gp = t == 0 ? double(p.g[t]) : std::max(double(p.g[t]), gp + 1 / r);
    rep.dal += gp - double(t) / r;
  }
  rep.dal /= double(n);
  return rep;
}

namespace {

// Clipped n-gram matches plus hypothesis n-gram total for one sentence.
std::pair<Index, Index> ngram_matches(const Tokens& hyp, const Tokens& ref, Index n) {
  const Index hyp_n = static_cast<Index>(hyp.size());
  const Index ref_n = static_cast<Index>(ref.size());
  if (hyp_n < n) return {0, 0};
  std::map<std::vector<std::string>, Index> ref_counts;
  for (Index i = 0; i + n <= ref_n; ++i) {
    ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
  }
  Index matches = 0;
  const Index total = hyp_n - n + 1;
  std::map<std::vector<std::string>, Index> used;
  for (Index i = 0; i + n <= hyp_n; ++i) {
    std::vector<std::string> gram(hyp.begin() + i, hyp.begin() + i + n);
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end() && used[gram] < it->second) {
      ++used[gram];
      ++matches;
    }
  }
  return {matches, total};
}

}  // namespace

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  check_arg(!hypotheses.empty(), "corpus_bleu: empty corpus");
  check_arg(hypotheses.size() == references.size(), "corpus_bleu: corpus size mismatch");

  constexpr Index kMaxOrder = 4;
  Index match[kMaxOrder] = {0, 0, 0, 0};
  Index total[kMaxOrder] = {0, 0, 0, 0};
  Index hyp_len = 0, ref_len = 0;
  for (Index s = 0; s < static_cast<Index>(hypotheses.size()); ++s) {
    hyp_len += static_cast<Index>(hypotheses[s].size());
    ref_len += static_cast<Index>(references[s].size());
    for (Index n = 1; n <= kMaxOrder; ++n) {
      auto [m, t] = ngram_matches(hypotheses[s], references[s], n);
      match[n - 1] += m;
      total[n - 1] += t;
    }
  }
  if (hyp_len == 0 || match[0] == 0) return 0;

  double log_prec = 0;
  for (Index n = 1; n <= kMaxOrder; ++n) {
    const double smooth = n >= 2 ? 1 : 0;
    log_prec += std::log((double(match[n - 1]) + smooth) / (double(total[n - 1]) + smooth));
  }
  const double bp = hyp_len >= ref_len ? 0 : 1 - double(ref_len) / double(hyp_len);
  return 100 * std::exp(bp + log_prec / kMaxOrder);
}

double hallucination_rate(Index hyp_len, const AlignmentLinks& links) {
  std::vector<bool> aligned(hyp_len, false);
  for (const auto& [t, s] : links) {
    check_arg(t >= 1 && t <= hyp_len, "hallucination_rate: link target out of range");
    aligned[t - 1] = true;
  }
  if (hyp_len == 0) return 0;
  Index uncovered = std::count(aligned.begin(), aligned.end(), false);
  return double(uncovered) / double(hyp_len);
}

Index cross_count(const AlignmentLinks& links) {
  Index count = 0;
  const Index n = static_cast<Index>(links.size());
  for (Index a = 0; a < n; ++a) {
    for (Index b = a + 1; b < n; ++b) {
      const auto dt = long(links[a].first) - long(links[b].first);
      const auto ds = long(links[a].second) - long(links[b].second);
      if ((dt < 0 && ds > 0) || (dt > 0 && ds < 0)) ++count;
    }
  }
  return count;
}

DifficultyPartition partition_by_difficulty(const std::vector<AlignmentLinks>& corpus) {
  std::vector<Index> order(corpus.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<Index> crosses(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) crosses[i] = cross_count(corpus[i]);
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return crosses[a] < crosses[b]; });

  const Index n = static_cast<Index>(corpus.size());
  const Index base = n / 3, rem = n % 3;
  const Index easy_n = base + (rem > 0 ? 1 : 0);
  const Index medium_n = base + (rem > 1 ? 1 : 0);
  DifficultyPartition part;
  for (Index i = 0; i < n; ++i) {
    auto& bucket = i < easy_n           ? part.easy
                   : i < easy_n + medium_n ? part.medium
                                           : part.hard;
    bucket.push_back(order[i]);
  }
  std::sort(part.easy.begin(), part.easy.end());
  std::sort(part.medium.begin(), part.medium.end());
  std::sort(part.hard.begin(), part.hard.end());
  return part;
}

}  // namespace nast
