#include "nast/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nast {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void check_posterior_shape(const Array& lp) {
  check_arg(lp.rank() == 2 && lp.cols() >= 1, "posterior must be a [T, V] array with V >= 1");
}

void check_targets(std::span<const Index> y, Index vocab) {
  for (Index tok : y)
    if (tok <= kBlankId || tok >= vocab)
      throw ContractViolation("target token out of range or blank");
}

Array exp_probs(const Array& lp) {
  Array p = lp;
  for (Index i = 0; i < p.numel(); ++i) p[i] = std::exp(p[i]);
  return p;
}

// Lattice over [blank, y1, blank, y2, ..., blank].
struct CtcLattice {
  Index time = 0;
  Index states = 0;
  std::vector<Index> symbol;   // state -> token id
  std::vector<double> alpha;   // time x states, log domain
  double total = kNegInf;

  double& a(Index t, Index s) { return alpha[static_cast<std::size_t>(t * states + s)]; }
  double a(Index t, Index s) const { return alpha[static_cast<std::size_t>(t * states + s)]; }
  bool skip_allowed(Index s) const {
    return s >= 2 && symbol[static_cast<std::size_t>(s)] != kBlankId &&
           symbol[static_cast<std::size_t>(s)] != symbol[static_cast<std::size_t>(s - 2)];
  }
};

CtcLattice ctc_forward(std::span<const Index> y, const Array& lp) {
  check_posterior_shape(lp);
  check_targets(y, lp.cols());
  CtcLattice lat;
  lat.time = lp.rows();
  const Index n = static_cast<Index>(y.size());
  lat.states = 2 * n + 1;
  lat.symbol.resize(static_cast<std::size_t>(lat.states), kBlankId);
  for (Index i = 0; i < n; ++i) lat.symbol[static_cast<std::size_t>(2 * i + 1)] = y[static_cast<std::size_t>(i)];
  if (lat.time == 0) {
    lat.total = y.empty() ? 0.0 : kNegInf;
    return lat;
  }
  lat.alpha.assign(static_cast<std::size_t>(lat.time * lat.states), kNegInf);
  lat.a(0, 0) = lp.at(0, kBlankId);
  if (lat.states > 1) lat.a(0, 1) = lp.at(0, lat.symbol[1]);
  for (Index t = 1; t < lat.time; ++t) {
    for (Index s = 0; s < lat.states; ++s) {
      double acc = lat.a(t - 1, s);
      if (s >= 1) acc = lse2(acc, lat.a(t - 1, s - 1));
      if (lat.skip_allowed(s)) acc = lse2(acc, lat.a(t - 1, s - 2));
      lat.a(t, s) = acc == kNegInf ? kNegInf : acc + lp.at(t, lat.symbol[static_cast<std::size_t>(s)]);
    }
  }
  lat.total = lat.a(lat.time - 1, lat.states - 1);
  if (lat.states >= 2) lat.total = lse2(lat.total, lat.a(lat.time - 1, lat.states - 2));
  return lat;
}

}  // namespace

void AlignmentPosterior::validate(double tol) const {
  check_posterior_shape(log_probs);
  check_arg(upsample >= 1, "upsample ratio must be >= 1");
  check_arg(wait_k >= 0, "wait_k must be >= 0");
  const Index t_count = log_probs.rows(), v_count = log_probs.cols();
  for (Index t = 0; t < t_count; ++t) {
    const double z =
        logsumexp(std::span<const double>(log_probs.v.data() + t * v_count, static_cast<std::size_t>(v_count)));
    if (!(std::abs(z) <= tol))
      throw ContractViolation("posterior row " + std::to_string(t) + " does not normalize: logsumexp = " +
                              std::to_string(z));
  }
}

std::vector<Index> collapse(std::span<const Index> alignment) {
  std::vector<Index> out;
  Index prev = kBlankId;
  bool has_prev = false;
  for (Index tok : alignment) {
    check_arg(tok >= 0, "collapse: negative token id");
    if (tok != kBlankId && (!has_prev || tok != prev)) out.push_back(tok);
    prev = tok;
    has_prev = true;
  }
  return out;
}

double ctc_log_prob(std::span<const Index> y, const Array& log_probs) {
  return ctc_forward(y, log_probs).total;
}

CtcGrad ctc_log_prob_with_grad(std::span<const Index> y, const Array& log_probs) {
  CtcLattice lat = ctc_forward(y, log_probs);
  if (lat.total == kNegInf)
    throw InfeasibleAlignment("ctc gradient undefined: target admits no alignment of this length");
  CtcGrad out{lat.total, Array::zeros(log_probs.shape)};
  if (lat.time == 0) return out;
  const Index T = lat.time, S = lat.states;
  std::vector<double> adj(static_cast<std::size_t>(S), 0.0);
  std::vector<double> prev_adj(static_cast<std::size_t>(S), 0.0);
  adj[static_cast<std::size_t>(S - 1)] = std::exp(lat.a(T - 1, S - 1) - lat.total);
  if (S >= 2) adj[static_cast<std::size_t>(S - 2)] = std::exp(lat.a(T - 1, S - 2) - lat.total);
  for (Index s = 0; s < S; ++s)
    out.d_log_probs.at(T - 1, lat.symbol[static_cast<std::size_t>(s)]) += adj[static_cast<std::size_t>(s)];
  for (Index t = T - 1; t >= 1; --t) {
    std::fill(prev_adj.begin(), prev_adj.end(), 0.0);
    for (Index s = 0; s < S; ++s) {
      const double as = adj[static_cast<std::size_t>(s)];
      if (as == 0.0 || lat.a(t, s) == kNegInf) continue;
      // log of the transition mass into (t, s), before the emission term
      const double inbound = lat.a(t, s) - log_probs.at(t, lat.symbol[static_cast<std::size_t>(s)]);
      if (lat.a(t - 1, s) != kNegInf)
        prev_adj[static_cast<std::size_t>(s)] += as * std::exp(lat.a(t - 1, s) - inbound);
      if (s >= 1 && lat.a(t - 1, s - 1) != kNegInf)
        prev_adj[static_cast<std::size_t>(s - 1)] += as * std::exp(lat.a(t - 1, s - 1) - inbound);
      if (lat.skip_allowed(s) && lat.a(t - 1, s - 2) != kNegInf)
        prev_adj[static_cast<std::size_t>(s - 2)] += as * std::exp(lat.a(t - 1, s - 2) - inbound);
    }
    adj.swap(prev_adj);
    for (Index s = 0; s < S; ++s)
      out.d_log_probs.at(t - 1, lat.symbol[static_cast<std::size_t>(s)]) += adj[static_cast<std::size_t>(s)];
  }
  return out;
}

std::vector<Index> viterbi_alignment(std::span<const Index> y, const Array& log_probs) {
  check_posterior_shape(log_probs);
  check_targets(y, log_probs.cols());
  const Index T = log_probs.rows();
  const Index n = static_cast<Index>(y.size());
  const Index S = 2 * n + 1;
  std::vector<Index> symbol(static_cast<std::size_t>(S), kBlankId);
  for (Index i = 0; i < n; ++i) symbol[static_cast<std::size_t>(2 * i + 1)] = y[static_cast<std::size_t>(i)];
  if (T == 0) {
    if (!y.empty()) throw InfeasibleAlignment("viterbi: empty alignment cannot produce tokens");
    return {};
  }
  std::vector<double> best(static_cast<std::size_t>(T * S), kNegInf);
  std::vector<Index> pred(static_cast<std::size_t>(T * S), -1);
  auto b = [&](Index t, Index s) -> double& { return best[static_cast<std::size_t>(t * S + s)]; };
  auto pr = [&](Index t, Index s) -> Index& { return pred[static_cast<std::size_t>(t * S + s)]; };
  auto skip_ok = [&](Index s) {
    return s >= 2 && symbol[static_cast<std::size_t>(s)] != kBlankId &&
           symbol[static_cast<std::size_t>(s)] != symbol[static_cast<std::size_t>(s - 2)];
  };
  b(0, 0) = log_probs.at(0, kBlankId);
  if (S > 1) b(0, 1) = log_probs.at(0, symbol[1]);
  for (Index t = 1; t < T; ++t) {
    for (Index s = 0; s < S; ++s) {
      // Ties prefer the higher predecessor state.
      double acc = b(t - 1, s);
      Index from = acc == kNegInf ? -1 : s;
      if (s >= 1 && b(t - 1, s - 1) > acc) {
        acc = b(t - 1, s - 1);
        from = s - 1;
      }
      if (skip_ok(s) && b(t - 1, s - 2) > acc) {
        acc = b(t - 1, s - 2);
        from = s - 2;
      }
      if (from < 0) continue;
      b(t, s) = acc + log_probs.at(t, symbol[static_cast<std::size_t>(s)]);
      pr(t, s) = from;
    }
  }
  Index end = S - 1;
  double total = b(T - 1, S - 1);
  if (S >= 2 && b(T - 1, S - 2) > total) {
    total = b(T - 1, S - 2);
    end = S - 2;
  }
  if (total == kNegInf)
    throw InfeasibleAlignment("viterbi: target admits no alignment of this length");
  std::vector<Index> alignment(static_cast<std::size_t>(T));
  Index s = end;
  for (Index t = T - 1; t >= 0; --t) {
    alignment[static_cast<std::size_t>(t)] = symbol[static_cast<std::size_t>(s)];
    if (t > 0) s = pr(t, s);
  }
  return alignment;
}

namespace {

// Shared pairwise accumulation for expected bigram counts. When weights is
// non-null, also accumulates sum_g weights[g] * dC_g/dp into d_probs
// (linear-domain gradient w.r.t. the probabilities).
std::vector<double> bigram_counts_core(const Array& p, std::span<const std::pair<Index, Index>> gs,
                                       const double* weights, Array* d_probs) {
  const Index T = p.rows(), V = p.cols();
  for (const auto& g : gs) {
    check_arg(g.first > kBlankId && g.first < V && g.second > kBlankId && g.second < V,
              "bigram tokens must be non-blank and in range");
  }
  std::vector<double> out(gs.size(), 0.0);
  if (T < 2) return out;

  // Prefix data over the blank column: count of zeros and sum of logs of the
  // non-zero entries, plus the positions of exact zeros.
  std::vector<Index> zero_count(static_cast<std::size_t>(T + 1), 0);
  std::vector<double> log_sum(static_cast<std::size_t>(T + 1), 0.0);
  std::vector<Index> zero_pos;
  for (Index t = 0; t < T; ++t) {
    const double pe = p.at(t, kBlankId);
    zero_count[static_cast<std::size_t>(t + 1)] = zero_count[static_cast<std::size_t>(t)] + (pe == 0.0 ? 1 : 0);
    log_sum[static_cast<std::size_t>(t + 1)] =
        log_sum[static_cast<std::size_t>(t)] + (pe == 0.0 ? 0.0 : std::log(pe));
    if (pe == 0.0) zero_pos.push_back(t);
  }
  // diff-array accumulator for the interior blank gradient, divided through
  // by p(blank) at the end
  std::vector<double> blank_diff;
  if (weights && d_probs) blank_diff.assign(static_cast<std::size_t>(T + 1), 0.0);

  for (std::size_t gi = 0; gi < gs.size(); ++gi) {
    const Index u = gs[gi].first, w = gs[gi].second;
    const double wgt = weights ? weights[gi] : 0.0;
    const bool want_grad = weights && d_probs && wgt != 0.0;
    double total = 0.0;
    for (Index t = 0; t + 1 < T; ++t) {
      const double pu = p.at(t, u);
      if (pu == 0.0 && !want_grad) continue;
      for (Index t2 = t + 1; t2 < T; ++t2) {
        if (t2 == t + 1 && u == w) continue;
        const Index zeros =
            zero_count[static_cast<std::size_t>(t2)] - zero_count[static_cast<std::size_t>(t + 1)];
        if (zeros >= 2 && !want_grad) continue;
        const double gap_log =
            log_sum[static_cast<std::size_t>(t2)] - log_sum[static_cast<std::size_t>(t + 1)];
        const double pw = p.at(t2, w);
        if (zeros == 0) {
          const double gap = t2 == t + 1 ? 1.0 : std::exp(gap_log);
          const double term = pu * gap * pw;
          total += term;
          if (want_grad) {
            (*d_probs).at(t, u) += wgt * gap * pw;
            (*d_probs).at(t2, w) += wgt * pu * gap;
            if (t2 > t + 1 && term != 0.0) {
              blank_diff[static_cast<std::size_t>(t + 1)] += wgt * term;
              blank_diff[static_cast<std::size_t>(t2)] -= wgt * term;
            }
          }
        } else if (zeros == 1 && want_grad) {
          // gradient flows only into the single zero blank slot
          auto it = std::lower_bound(zero_pos.begin(), zero_pos.end(), t + 1);
          const Index s0 = *it;
          (*d_probs).at(s0, kBlankId) += wgt * pu * pw * std::exp(gap_log);
        }
      }
    }
    out[gi] = total;
  }
  if (weights && d_probs) {
    double running = 0.0;
    for (Index t = 0; t < T; ++t) {
      running += blank_diff[static_cast<std::size_t>(t)];
      if (running != 0.0) (*d_probs).at(t, kBlankId) += running / p.at(t, kBlankId);
    }
  }
  return out;
}

}  // namespace

std::vector<double> expected_bigram_counts(std::span<const std::pair<Index, Index>> bigrams,
                                           const Array& log_probs) {
  check_posterior_shape(log_probs);
  return bigram_counts_core(exp_probs(log_probs), bigrams, nullptr, nullptr);
}

BigramTable bigram_table(std::span<const Index> y, const Array& log_probs) {
  check_posterior_shape(log_probs);
  check_targets(y, log_probs.cols());
  BigramTable table;
  std::vector<std::pair<Index, Index>> distinct;
  for (std::size_t i = 0; i + 1 < y.size(); ++i) {
    const std::pair<Index, Index> g{y[i], y[i + 1]};
    bool found = false;
    for (auto& e : table.entries) {
      if (e.first == g.first && e.second == g.second) {
        e.target_count += 1.0;
        found = true;
        break;
      }
    }
    if (!found) {
      table.entries.push_back({g.first, g.second, 1.0, 0.0});
      distinct.push_back(g);
    }
  }
  const std::vector<double> expected = bigram_counts_core(exp_probs(log_probs), distinct, nullptr, nullptr);
  for (std::size_t i = 0; i < expected.size(); ++i) table.entries[i].expected_count = expected[i];
  return table;
}

namespace {

struct NmlaParts {
  BigramTable table;
  double matched = 0.0;
  double denom = 0.0;
  double loss = 0.0;
};

NmlaParts nmla_parts(std::span<const Index> y, const Array& log_probs) {
  if (y.size() < 2)
    throw DegenerateTarget("nmla_loss requires at least two target tokens");
  NmlaParts parts;
  parts.table = bigram_table(y, log_probs);
  for (const auto& e : parts.table.entries) {
    parts.matched += std::min(e.target_count, e.expected_count);
    parts.denom += e.target_count + e.expected_count;
  }
  parts.loss = -2.0 * parts.matched / parts.denom;
  // normalize -0 so an all-blank expectation reports exactly 0
  if (parts.loss == 0.0) parts.loss = 0.0;
  return parts;
}

}  // namespace

double nmla_loss(std::span<const Index> y, const Array& log_probs) {
  return nmla_parts(y, log_probs).loss;
}

NmlaGrad nmla_loss_with_grad(std::span<const Index> y, const Array& log_probs) {
  NmlaParts parts = nmla_parts(y, log_probs);
  const double d = parts.denom, m = parts.matched;
  std::vector<std::pair<Index, Index>> gs;
  std::vector<double> weights;
  for (const auto& e : parts.table.entries) {
    gs.push_back({e.first, e.second});
    // dL/dC_g = -2 * (1[C_g <= target] * D - M) / D^2; the indicator is the
    // min() branch, clipped counts route gradient through the expectation
    const double ind = e.expected_count <= e.target_count ? 1.0 : 0.0;
    weights.push_back(-2.0 * (ind * d - m) / (d * d));
  }
  const Array p = exp_probs(log_probs);
  Array d_probs = Array::zeros(log_probs.shape);
  bigram_counts_core(p, gs, weights.data(), &d_probs);
  NmlaGrad out{parts.loss, Array::zeros(log_probs.shape)};
  for (Index i = 0; i < d_probs.numel(); ++i) out.d_log_probs[i] = d_probs[i] * p[i];
  return out;
}

std::vector<double> reservation_probs(const Array& log_probs) {
  check_posterior_shape(log_probs);
  const Array p = exp_probs(log_probs);
  const Index T = p.rows(), V = p.cols();
  std::vector<double> r(static_cast<std::size_t>(T), 0.0);
  for (Index t = 0; t < T; ++t) {
    double val = 1.0 - p.at(t, kBlankId);
    if (t > 0) {
      double rep = 0.0;
      for (Index v = 1; v < V; ++v) rep += p.at(t, v) * p.at(t - 1, v);
      val -= rep;
    }
    r[static_cast<std::size_t>(t)] = val;
  }
  return r;
}

namespace {

Index moment_of_position(Index pos, Index upsample, Index wait_k, Index src_len) {
  // pos is 0-based; chunk of pos is pos / upsample, 1-based chunk index + k
  // capped at the source length
  return std::min(pos / upsample + 1 + wait_k, src_len);
}

struct AlParts {
  double e_tau = 0.0;
  double e_mass = 0.0;
  double den = 0.0;
  double al = 0.0;
  Index bound = 0;
  std::vector<double> r;
};

AlParts expected_al_parts(const Array& lp, Index upsample, Index wait_k, Index src_len) {
  check_posterior_shape(lp);
  check_arg(upsample >= 1 && wait_k >= 0, "bad decode geometry");
  if (src_len < 2) throw DegenerateInput("expected_al requires at least two source tokens");
  check_arg(lp.rows() == upsample * src_len, "posterior length must equal upsample * src_len");
  AlParts parts;
  parts.r = reservation_probs(lp);
  parts.bound = (src_len - 1) * upsample;
  for (Index i = 0; i < parts.bound; ++i) {
    parts.e_tau += parts.r[static_cast<std::size_t>(i)];
    parts.e_mass += parts.r[static_cast<std::size_t>(i)] *
                    static_cast<double>(moment_of_position(i, upsample, wait_k, src_len));
  }
  parts.den = std::max(parts.e_tau, kLagDenomFloor);
  parts.al = (parts.e_mass - 0.5 * static_cast<double>(src_len) * (parts.e_tau - 1.0)) / parts.den;
  return parts;
}

}  // namespace

double expected_al(const Array& log_probs, Index upsample, Index wait_k, Index src_len) {
  return expected_al_parts(log_probs, upsample, wait_k, src_len).al;
}

double latency_loss(const Array& log_probs, Index upsample, Index wait_k, Index src_len,
                    double min_lag) {
  return std::max(expected_al(log_probs, upsample, wait_k, src_len), min_lag);
}

LatencyGrad latency_loss_with_grad(const Array& log_probs, Index upsample, Index wait_k,
                                   Index src_len, double min_lag) {
  AlParts parts = expected_al_parts(log_probs, upsample, wait_k, src_len);
  LatencyGrad out{std::max(parts.al, min_lag), parts.al, Array::zeros(log_probs.shape)};
  if (!(parts.al > min_lag)) return out;  // clamped regime: zero gradient

  const double num = parts.e_mass - 0.5 * static_cast<double>(src_len) * (parts.e_tau - 1.0);
  const double d_al_d_mass = 1.0 / parts.den;
  double d_al_d_tau = -0.5 * static_cast<double>(src_len) / parts.den;
  if (parts.e_tau > kLagDenomFloor) d_al_d_tau -= num / (parts.den * parts.den);

  const Array p = exp_probs(log_probs);
  const Index V = p.cols();
  Array d_probs = Array::zeros(log_probs.shape);
  for (Index i = 0; i < parts.bound; ++i) {
    const double dr = d_al_d_tau +
                      d_al_d_mass * static_cast<double>(moment_of_position(i, upsample, wait_k, src_len));
    // r_i = 1 - p_i(blank) - sum_v p_i(v) p_{i-1}(v)
    d_probs.at(i, kBlankId) += -dr;
    if (i > 0) {
      for (Index v = 1; v < V; ++v) {
        d_probs.at(i, v) += -dr * p.at(i - 1, v);
        d_probs.at(i - 1, v) += -dr * p.at(i, v);
      }
    }
  }
  for (Index i = 0; i < d_probs.numel(); ++i) out.d_log_probs[i] = d_probs[i] * p[i];
  return out;
}

Var ctc_log_prob_op(Tape& tape, Var log_probs, std::vector<Index> y) {
  const Array& lp = tape.val(log_probs);
  if (tape.grad_enabled() && tape.requires_grad(log_probs)) {
    CtcGrad g = ctc_log_prob_with_grad(y, lp);
    return tape.custom({log_probs}, Array::scalar(g.log_prob),
                       [log_probs, d = std::move(g.d_log_probs)](Tape& t, Index self) {
                         const double gs = t.grad_of(Var{self}).v[0];
                         if (Array* buf = t.grad_buf_if(log_probs))
                           for (Index i = 0; i < d.numel(); ++i) (*buf)[i] += gs * d[i];
                       });
  }
  return tape.constant(Array::scalar(ctc_log_prob(y, lp)));
}

Var nmla_loss_op(Tape& tape, Var log_probs, std::vector<Index> y) {
  const Array& lp = tape.val(log_probs);
  if (tape.grad_enabled() && tape.requires_grad(log_probs)) {
    NmlaGrad g = nmla_loss_with_grad(y, lp);
    return tape.custom({log_probs}, Array::scalar(g.loss),
                       [log_probs, d = std::move(g.d_log_probs)](Tape& t, Index self) {
                         const double gs = t.grad_of(Var{self}).v[0];
                         if (Array* buf = t.grad_buf_if(log_probs))
                           for (Index i = 0; i < d.numel(); ++i) (*buf)[i] += gs * d[i];
                       });
  }
  return tape.constant(Array::scalar(nmla_loss(y, lp)));
}

Var latency_loss_op(Tape& tape, Var log_probs, Index upsample, Index wait_k, Index src_len,
                    double min_lag) {
  const Array& lp = tape.val(log_probs);
  if (tape.grad_enabled() && tape.requires_grad(log_probs)) {
    LatencyGrad g = latency_loss_with_grad(lp, upsample, wait_k, src_len, min_lag);
    return tape.custom({log_probs}, Array::scalar(g.loss),
                       [log_probs, d = std::move(g.d_log_probs)](Tape& t, Index self) {
                         const double gs = t.grad_of(Var{self}).v[0];
                         if (Array* buf = t.grad_buf_if(log_probs))
                           for (Index i = 0; i < d.numel(); ++i) (*buf)[i] += gs * d[i];
                       });
  }
  return tape.constant(Array::scalar(latency_loss(lp, upsample, wait_k, src_len, min_lag)));
}

}  // namespace nast
