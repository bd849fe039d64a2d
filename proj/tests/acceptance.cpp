// Acceptance gate: one pass/fail line per criterion, exit 0 iff all selected
// criteria pass. Run a single criterion with --only N.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nast/checkpoint.hpp"
#include "nast/data.hpp"
#include "nast/lattice.hpp"
#include "nast/metrics.hpp"
#include "nast/model.hpp"
#include "nast/rng.hpp"
#include "nast/stream.hpp"
#include "nast/suites.hpp"
#include "nast/train.hpp"

using namespace nast;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool verbose() {
  static const bool on = std::getenv("NAST_ACCEPT_LOG") != nullptr;
  return on;
}

void note(const std::string& line) {
  if (verbose()) std::cerr << "  | " << line << "\n";
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

Array uniform_log_rows(Index t, Index v) {
  return Array::full({t, v}, -std::log(static_cast<double>(v)));
}

constexpr double kLogZero = -1e30;  // exp underflows to exactly 0

Array rows_from_probs(const std::vector<std::vector<double>>& rows) {
  const Index t = static_cast<Index>(rows.size());
  const Index v = static_cast<Index>(rows.front().size());
  Array a = Array::zeros({t, v});
  for (Index r = 0; r < t; ++r)
    for (Index c = 0; c < v; ++c) {
      const double p = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      a.at(r, c) = p > 0 ? std::log(p) : kLogZero;
    }
  return a;
}

ModelConfig small_config(Index vocab, Index upsample, Index wait_k, Index max_positions = 64) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.upsample = upsample;
  c.wait_k = wait_k;
  c.max_positions = max_positions;
  return c;
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion_oracle_suite() {
  const auto t0 = Clock::now();
  const SuiteReport r = run_oracle_suite(600, 1e-6, 1);
  const double el = seconds_since(t0);
  Outcome o;
  o.ok = r.pass() && r.instances >= 500 && el < 120.0;
  o.detail = std::to_string(r.instances) + " instances, " + std::to_string(r.checks) +
             " checks vs enumeration, worst err " + fmt(r.worst_err, 3) + " (tol 1e-6), " +
             fmt(el, 3) + "s";
  if (!r.pass()) o.detail += ", failures " + std::to_string(r.failures) + " at " + r.worst_case;
  return o;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_grad_suite() {
  const auto t0 = Clock::now();
  const SuiteReport r = run_grad_suite(60, 1e-4, 1);
  const double el = seconds_since(t0);
  Outcome o;
  o.ok = r.pass() && r.instances >= 50 && el < 300.0;
  o.detail = std::to_string(r.instances) + " instances, " + std::to_string(r.checks) +
             " gradient coords, worst rel err " + fmt(r.worst_err, 3) + " (tol 1e-4), " +
             fmt(el, 3) + "s";
  if (!r.pass()) o.detail += ", failures " + std::to_string(r.failures) + " at " + r.worst_case;
  return o;
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion_worked_values() {
  std::vector<std::string> bad;
  const auto expect = [&](const std::string& name, double got, double want) {
    if (std::abs(got - want) > 1e-9)
      bad.push_back(name + " got " + fmt(got, 10) + " want " + fmt(want, 10));
  };

  expect("uniform marginal", std::exp(ctc_log_prob(std::vector<Index>{1}, uniform_log_rows(2, 2))),
         0.75);

  const std::vector<std::pair<Index, Index>> ab{{1, 2}};
  expect("expected bigram count", expected_bigram_counts(ab, uniform_log_rows(3, 3))[0],
         7.0 / 27.0);

  expect("bigram f-measure loss", nmla_loss(std::vector<Index>{1, 2}, uniform_log_rows(3, 3)),
         -7.0 / 17.0);

  const Array res = rows_from_probs({{0.5, 0.1, 0.4}, {0.2, 0.5, 0.3}});
  expect("reservation probability", reservation_probs(res)[1], 0.63);

  // deterministic one-token read: lag 1 exactly
  const Array al1 = rows_from_probs({{0.0, 1.0}, {0.5, 0.5}});
  expect("expected lag, two-token source", expected_al(al1, 1, 0, 2), 1.0);

  // two certain reads at moments 1 and 2
  const Array al2 = rows_from_probs(
      {{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
  expect("expected lag, three-token source", expected_al(al2, 1, 0, 3), 0.75);

  Outcome o;
  o.ok = bad.empty();
  o.detail = o.ok ? "0.75, 7/27, -7/17, 0.63, 1, 0.75 all reproduced" : "";
  for (const auto& b : bad) o.detail += (o.detail.empty() ? "" : "; ") + b;
  return o;
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion_streaming_equivalence() {
  Rng rng(11);
  Index raw_cases = 0;
  Index raw_bad = 0;
  for (int it = 0; it < 10000; ++it) {
    const Index upsample = rng.uniform_int(1, 4);
    const Index src_len = rng.uniform_int(1, 8);
    std::vector<Index> raw;
    for (Index i = 0; i < src_len * upsample; ++i) raw.push_back(rng.uniform_int(0, 5));
    for (CollapseMode mode : {CollapseMode::Exact, CollapseMode::PaperLiteral}) {
      ChunkMerger merger(mode);
      std::vector<Index> streamed;
      for (Index c = 0; c < src_len; ++c) {
        const auto emitted = merger.feed(
            std::span<const Index>(raw.data() + c * upsample, static_cast<std::size_t>(upsample)));
        streamed.insert(streamed.end(), emitted.begin(), emitted.end());
      }
      if (streamed != merge_chunks(raw, upsample, mode)) ++raw_bad;
      if (mode == CollapseMode::Exact && streamed != collapse(raw)) ++raw_bad;
    }
    ++raw_cases;
  }

  // model-decoded sentences: incremental session vs offline decode
  Index sent_cases = 0;
  Index sent_bad = 0;
  const Index ks[] = {0, 1, 2, 3, 5};
  for (Index ki = 0; ki < 5; ++ki) {
    const Index k = ks[ki];
    const Model model = Model::init(small_config(7, 2, k, 32), 300 + k);
    for (int it = 0; it < 50; ++it) {
      for (CollapseMode mode : {CollapseMode::Exact, CollapseMode::PaperLiteral}) {
        const Index len = rng.uniform_int(1, 8);
        std::vector<Index> src;
        for (Index i = 0; i < len; ++i) src.push_back(rng.uniform_int(3, 6));
        StreamSession session(model, k, mode);
        std::vector<Index> emitted;
        for (Index tok : src) {
          const auto out = session.push(tok);
          emitted.insert(emitted.end(), out.begin(), out.end());
        }
        const auto tail = session.finalize();
        emitted.insert(emitted.end(), tail.begin(), tail.end());
        if (emitted != offline_reference_decode(model, src, mode)) ++sent_bad;
        ++sent_cases;
      }
    }
  }

  // the documented boundary divergence: raw [a, eps | a, b]
  const std::vector<Index> raw{1, 0, 1, 2};
  const bool divergence_ok =
      merge_chunks(raw, 2, CollapseMode::PaperLiteral) == std::vector<Index>{1, 2} &&
      merge_chunks(raw, 2, CollapseMode::Exact) == std::vector<Index>{1, 1, 2} &&
      collapse(raw) == std::vector<Index>{1, 1, 2};

  Outcome o;
  o.ok = raw_bad == 0 && sent_bad == 0 && divergence_ok && raw_cases == 10000 && sent_cases == 500;
  o.detail = std::to_string(raw_cases) + " raw alignments + " + std::to_string(sent_cases) +
             " model-decoded sentences token-exact, boundary divergence " +
             std::string(divergence_ok ? "reproduced" : "WRONG");
  if (raw_bad + sent_bad > 0)
    o.detail += ", mismatches " + std::to_string(raw_bad) + "/" + std::to_string(sent_bad);
  return o;
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion_causality() {
  Rng rng(13);
  Index cases = 0;
  Index bad = 0;
  for (Index k : {Index{0}, Index{2}, Index{5}}) {
    const ModelConfig cfg = small_config(7, 3, k, 96);
    const Model model = Model::init(cfg, 400 + k);
    for (int it = 0; it < 100; ++it) {
      const Index m = rng.uniform_int(k + 2, k + 6);
      const Index keep = rng.uniform_int(k + 1, m - 1);  // >= 1 stable chunk
      std::vector<Index> src;
      for (Index i = 0; i < m; ++i) src.push_back(rng.uniform_int(3, 6));
      const std::vector<Index> prefix(src.begin(), src.begin() + keep);

      // encoder states over the prefix never see the future
      Tape t1(false), t2(false);
      const LiftedModel l1 = lift_model(t1, model, false);
      const LiftedModel l2 = lift_model(t2, model, false);
      const Array enc_prefix = t1.val(encoder_forward(t1, l1, prefix));
      const Array enc_full = t2.val(encoder_forward(t2, l2, src));
      const std::size_t row = static_cast<std::size_t>(cfg.embed_dim) * sizeof(double);
      if (std::memcmp(enc_prefix.v.data(), enc_full.v.data(),
                      static_cast<std::size_t>(keep) * row) != 0)
        ++bad;

      // decoder chunks whose moment fits in the prefix are bitwise stable
      const Array lp_prefix = decode_log_probs(model, prefix);
      const Array lp_full = decode_log_probs(model, src);
      const Index stable_rows = (keep - k) * cfg.upsample;
      const std::size_t lp_row = static_cast<std::size_t>(cfg.vocab_size) * sizeof(double);
      if (std::memcmp(lp_prefix.v.data(), lp_full.v.data(),
                      static_cast<std::size_t>(stable_rows) * lp_row) != 0)
        ++bad;
      ++cases;
    }
  }
  Outcome o;
  o.ok = bad == 0 && cases == 300;
  o.detail = std::to_string(cases) + " random inputs at k in {0,2,5}: encoder rows and " +
             "in-horizon chunks bitwise invariant to unseen source";
  if (bad > 0) o.detail += ", violations " + std::to_string(bad);
  return o;
}

// ----------------------------------------------------------- criteria 6 and 7

struct ScoredRun {
  double bleu = 0;
  double mean_al = 0;
  double exact = 0;
};

ScoredRun score_model(const Model& model, const Vocab& vocab, const ParallelCorpus& dev,
                      Index runtime_k) {
  std::vector<Tokens> hyps, refs;
  double al_sum = 0;
  Index al_n = 0;
  Index exact = 0;
  for (const auto& pair : dev.pairs) {
    StreamSession session(model, runtime_k, CollapseMode::PaperLiteral);
    for (Index tok : pair.source) session.push(tok);
    session.finalize();
    const auto& hyp = session.hypothesis();
    if (hyp == pair.target) ++exact;
    Tokens ht, rt;
    for (Index id : hyp) ht.push_back(vocab.token(id));
    for (Index id : pair.target) rt.push_back(vocab.token(id));
    hyps.push_back(std::move(ht));
    refs.push_back(std::move(rt));
    const PolicyRecord p = policy_from_trace(session.trace());
    if (!p.g.empty()) {
      al_sum += latency_metrics(p, true).al;
      ++al_n;
    }
  }
  ScoredRun r;
  r.bleu = corpus_bleu(hyps, refs);
  r.mean_al = al_n > 0 ? al_sum / static_cast<double>(al_n) : 0.0;
  r.exact = static_cast<double>(exact) / static_cast<double>(dev.pairs.size());
  return r;
}

Outcome criterion_copy_task() {
  const auto t0 = Clock::now();
  SynthSpec spec;
  spec.task = SynthTask::Copy;
  spec.n = 10000;
  spec.len_min = 5;
  spec.len_max = 20;
  spec.vocab_size = 32;
  spec.seed = 7;
  SynthResult train_data = synth_generate(spec);
  SynthSpec dev_spec = spec;
  dev_spec.n = 200;
  dev_spec.seed = 8;
  SynthResult dev_data = synth_generate(dev_spec);

  ModelConfig mc;
  mc.vocab_size = train_data.vocab.size();
  mc.embed_dim = 64;
  mc.heads = 4;
  mc.ffn_dim = 128;
  mc.enc_layers = 2;
  mc.dec_layers = 2;
  mc.upsample = 3;
  mc.wait_k = 0;
  mc.max_positions = 64;
  Model model = Model::init(mc, 1);

  TrainConfig tc;
  tc.stage = 1;
  tc.steps = 8000;  // well under the 20k budget
  tc.batch_tokens = 320;
  tc.lr_peak = 2e-3;
  tc.warmup_steps = 100;
  tc.label_smoothing = 0.01;
  // Keep the glancing floor high: the last errors to go are the separator
  // blanks between equal adjacent tokens, and with only one or two mismatched
  // positions per sentence a lower ratio rounds the replacement count to zero.
  tc.glancing.start = 0.5;
  tc.glancing.end = 0.3;
  tc.glancing.anneal_steps = 8000;
  tc.seed = 1;
  tc.log_every = 50;
  tc.eval_every = 100;
  tc.early_stop_exact = 0.995;

  filter_infeasible(train_data.corpus, mc.upsample);
  filter_infeasible(dev_data.corpus, mc.upsample);
  Trainer trainer(model, train_data.corpus, dev_data.corpus, tc);
  trainer.sink = [](const std::string& line) { note(line); };
  trainer.run();
  const EvalResult ev = trainer.evaluate_dev();
  const ScoredRun scored = score_model(model, train_data.vocab, dev_data.corpus, 0);
  const double el = seconds_since(t0);

  Outcome o;
  o.ok = ev.exact_match >= 0.99 && trainer.steps_done() <= 20000 && el < 1800.0;
  o.detail = "exact match " + fmt(100.0 * ev.exact_match, 4) + "%, bleu " + fmt(scored.bleu, 4) +
             ", " + std::to_string(trainer.steps_done()) + " steps, " + fmt(el, 3) + "s";
  return o;
}

Model train_stage1(const ParallelCorpus& corpus, Index vocab_size, Index wait_k, Index steps,
                   std::uint64_t seed) {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.embed_dim = 32;
  mc.heads = 4;
  mc.ffn_dim = 64;
  mc.enc_layers = 2;
  mc.dec_layers = 2;
  mc.upsample = 3;
  mc.wait_k = wait_k;
  mc.max_positions = 96;
  Model model = Model::init(mc, seed);

  TrainConfig tc;
  tc.stage = 1;
  tc.steps = steps;
  tc.batch_tokens = 240;
  tc.lr_peak = 2e-3;
  tc.warmup_steps = 60;
  tc.label_smoothing = 0.01;
  tc.glancing.start = 0.5;
  tc.glancing.end = 0.3;
  tc.glancing.anneal_steps = steps;
  tc.seed = seed;
  tc.log_every = 50;
  Trainer trainer(model, corpus, {}, tc);
  trainer.sink = [](const std::string& line) { note("s1 " + line); };
  trainer.run();
  return model;
}

void train_stage2(Model& model, const ParallelCorpus& corpus, Index steps, double l_min,
                  std::uint64_t seed) {
  TrainConfig tc;
  tc.stage = 2;
  tc.steps = steps;
  tc.batch_tokens = 240;
  tc.lr_peak = 5e-4;
  tc.warmup_steps = 30;
  tc.glancing.start = 0.3;
  tc.glancing.end = 0.3;
  tc.glancing.anneal_steps = steps;
  tc.l_min = l_min;
  tc.seed = seed;
  tc.log_every = 25;
  Trainer trainer(model, corpus, {}, tc);
  trainer.sink = [](const std::string& line) { note("s2 " + line); };
  trainer.run();
}

Outcome criterion_reordering_trends() {
  const auto t0 = Clock::now();
  SynthSpec spec;
  spec.task = SynthTask::Sov2Svo;
  spec.n = 600;
  spec.vocab_size = 30;
  spec.seed = 17;
  SynthResult train_data = synth_generate(spec);
  SynthSpec dev_spec = spec;
  dev_spec.n = 120;
  dev_spec.seed = 18;
  SynthResult dev_data = synth_generate(dev_spec);
  filter_infeasible(train_data.corpus, 3);
  filter_infeasible(dev_data.corpus, 3);
  const Index vocab_size = train_data.vocab.size();

  const Index s1_steps = 400, s2_steps = 250;

  Model m_k0 = train_stage1(train_data.corpus, vocab_size, 0, s1_steps, 21);
  Model m_k2 = train_stage1(train_data.corpus, vocab_size, 2, s1_steps, 22);
  Model m_k4 = train_stage1(train_data.corpus, vocab_size, 4, s1_steps, 23);
  const ScoredRun s1_k0 = score_model(m_k0, train_data.vocab, dev_data.corpus, 0);
  const ScoredRun s1_k2 = score_model(m_k2, train_data.vocab, dev_data.corpus, 2);
  const ScoredRun s1_k4 = score_model(m_k4, train_data.vocab, dev_data.corpus, 4);
  note("stage1 bleu/al k0 " + fmt(s1_k0.bleu) + "/" + fmt(s1_k0.mean_al) + " k2 " +
       fmt(s1_k2.bleu) + "/" + fmt(s1_k2.mean_al) + " k4 " + fmt(s1_k4.bleu) + "/" +
       fmt(s1_k4.mean_al));

  Model m_k0_low = m_k0;  // fine-tune copies so the base stays comparable
  train_stage2(m_k0_low, train_data.corpus, s2_steps, 0.0, 31);
  Model m_k0_wait = m_k0;
  train_stage2(m_k0_wait, train_data.corpus, s2_steps, 3.0, 32);
  Model m_k2_tuned = m_k2;
  train_stage2(m_k2_tuned, train_data.corpus, s2_steps, 0.0, 33);

  const ScoredRun s2_k0 = score_model(m_k0_low, train_data.vocab, dev_data.corpus, 0);
  const ScoredRun s2_k0_wait = score_model(m_k0_wait, train_data.vocab, dev_data.corpus, 0);
  const ScoredRun s2_k2 = score_model(m_k2_tuned, train_data.vocab, dev_data.corpus, 2);
  note("stage2 bleu/al k0 " + fmt(s2_k0.bleu) + "/" + fmt(s2_k0.mean_al) + " k0(l3) " +
       fmt(s2_k0_wait.bleu) + "/" + fmt(s2_k0_wait.mean_al) + " k2 " + fmt(s2_k2.bleu) + "/" +
       fmt(s2_k2.mean_al));

  // The k=0 quality comparison runs at matched measured latency: of the two
  // fine-tunes, compare the one whose AL lands closest to the stage-1 base.
  const bool wait_closer = std::abs(s2_k0_wait.mean_al - s1_k0.mean_al) <
                           std::abs(s2_k0.mean_al - s1_k0.mean_al);
  const ScoredRun& s2_k0_matched = wait_closer ? s2_k0_wait : s2_k0;
  const bool bleu_gain = s2_k0_matched.bleu > s1_k0.bleu && s2_k2.bleu > s1_k2.bleu;
  const bool al_monotone = s1_k0.mean_al < s1_k2.mean_al && s1_k2.mean_al < s1_k4.mean_al;
  const bool lag_floor = s2_k0.mean_al < s2_k0_wait.mean_al;
  const double el = seconds_since(t0);

  Outcome o;
  o.ok = bleu_gain && al_monotone && lag_floor;
  o.detail = "bleu k0 " + fmt(s1_k0.bleu) + "->" + fmt(s2_k0_matched.bleu) + " (l_min " +
             (wait_closer ? std::string("3") : std::string("0")) + "), k2 " + fmt(s1_k2.bleu) +
             "->" + fmt(s2_k2.bleu) + "; al over k {0,2,4}: " + fmt(s1_k0.mean_al) + " < " +
             fmt(s1_k2.mean_al) + " < " + fmt(s1_k4.mean_al) + "; lag floor 3->0 al " +
             fmt(s2_k0_wait.mean_al) + "->" + fmt(s2_k0.mean_al) + "; " + fmt(el, 3) + "s";
  if (!bleu_gain) o.detail += " [bleu gain MISSING]";
  if (!al_monotone) o.detail += " [al not increasing in k]";
  if (!lag_floor) o.detail += " [lag floor had no effect]";
  return o;
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion_metric_hand_checks() {
  std::vector<std::string> bad;
  const auto expect = [&](const std::string& name, double got, double want) {
    if (std::abs(got - want) > 1e-9)
      bad.push_back(name + " got " + fmt(got, 10) + " want " + fmt(want, 10));
  };

  PolicyRecord wait1;
  wait1.src_len = 3;
  wait1.g = {1, 2, 3};
  const LatencyReport a = latency_metrics(wait1);
  expect("wait-1 al", a.al, 1.0);
  expect("wait-1 ap", a.ap, 2.0 / 3.0);
  expect("wait-1 cw", a.cw, 1.0);
  expect("wait-1 dal", a.dal, 1.0);

  PolicyRecord full;
  full.src_len = 3;
  full.g = {3, 3, 3};
  const LatencyReport b = latency_metrics(full);
  expect("full-sentence al", b.al, 3.0);
  expect("full-sentence ap", b.ap, 1.0);
  expect("full-sentence cw", b.cw, 3.0);
  expect("full-sentence dal", b.dal, 3.0);

  expect("single inversion", static_cast<double>(cross_count({{1, 2}, {2, 1}})), 1.0);
  expect("monotone diagonal", static_cast<double>(cross_count({{1, 1}, {2, 2}, {3, 3}})), 0.0);
  expect("full reversal", static_cast<double>(cross_count({{1, 3}, {2, 2}, {3, 1}})), 3.0);

  expect("uncovered token", hallucination_rate(3, {{1, 1}, {3, 2}}), 1.0 / 3.0);
  expect("covered tokens", hallucination_rate(2, {{1, 1}, {2, 2}}), 0.0);
  expect("no links", hallucination_rate(2, {}), 1.0);

  Outcome o;
  o.ok = bad.empty();
  o.detail = o.ok ? "(1, 2/3, 1, 1) and (3, 1, 3, 3) reproduced; cross and hallucination counts match"
                  : "";
  for (const auto& m : bad) o.detail += (o.detail.empty() ? "" : "; ") + m;
  return o;
}

// ---------------------------------------------------------------- criterion 9

Outcome criterion_persistence() {
  const std::string dir =
      (std::filesystem::temp_directory_path() / "nast_acceptance_ckpt").string();
  std::filesystem::create_directories(dir);
  Rng rng(19);
  Index roundtrips = 0;
  Index bad = 0;
  for (int it = 0; it < 10; ++it) {
    ModelConfig mc;
    const Index heads = rng.uniform_int(1, 4);
    mc.heads = heads;
    mc.embed_dim = heads * rng.uniform_int(2, 6);
    mc.ffn_dim = rng.uniform_int(4, 24);
    mc.enc_layers = rng.uniform_int(1, 2);
    mc.dec_layers = rng.uniform_int(1, 2);
    mc.vocab_size = rng.uniform_int(4, 12);
    mc.upsample = rng.uniform_int(1, 3);
    mc.wait_k = rng.uniform_int(0, 3);
    mc.max_positions = 48;
    const Model model = Model::init(mc, 500 + static_cast<std::uint64_t>(it));
    Vocab vocab;
    for (Index i = kReservedIds; i < mc.vocab_size; ++i) vocab.add("tok" + std::to_string(i));
    ConfigFile extra;
    vocab_to_config(vocab, extra);
    const std::string path = dir + "/model_" + std::to_string(it) + ".ckpt";
    save_checkpoint(path, model, extra);
    const LoadedCheckpoint loaded = load_checkpoint(path);
    bool same = loaded.model.params.count() == model.params.count() &&
                loaded.vocab.size() == vocab.size() &&
                loaded.model.config.wait_k == mc.wait_k &&
                loaded.model.config.upsample == mc.upsample;
    for (Index i = 0; same && i < model.params.count(); ++i) {
      const Tensor& x = model.params.slot(i);
      const Tensor& y = loaded.model.params.slot(i);
      same = x.shape == y.shape &&
             std::memcmp(x.v.data(), y.v.data(), x.v.size() * sizeof(float)) == 0;
    }
    if (!same) ++bad;
    ++roundtrips;
  }

  // corruption cases, each with its own error class
  const Model model = Model::init(small_config(6, 2, 0, 32), 600);
  ConfigFile extra;
  vocab_to_config(Vocab{}, extra);
  const std::string good_path = dir + "/good.ckpt";
  save_checkpoint(good_path, model, extra);
  const std::string good = read_text_file(good_path);
  std::size_t cfg_len = 0;
  for (int i = 7; i >= 0; --i)
    cfg_len = (cfg_len << 8) | static_cast<unsigned char>(good[12 + static_cast<std::size_t>(i)]);
  const std::size_t count_off = 8 + 4 + 8 + cfg_len;
  const std::string bad_path = dir + "/bad.ckpt";
  const auto patch_u32 = [](std::string& bytes, std::size_t off, std::uint32_t x) {
    for (int i = 0; i < 4; ++i)
      bytes[off + static_cast<std::size_t>(i)] = static_cast<char>((x >> (8 * i)) & 0xff);
  };
  const auto fails_with = [&](const std::string& bytes, auto tag) {
    using Err = decltype(tag);
    write_text_file(bad_path, bytes);
    try {
      load_checkpoint(bad_path);
      return false;
    } catch (const Err&) {
      return true;
    } catch (const std::exception&) {
      return false;  // wrong class
    }
  };

  Index negatives = 0;
  std::string wrong;
  {
    std::string b = good;
    b[0] = 'X';
    if (fails_with(b, CheckpointFormatError{""})) ++negatives; else wrong += " magic";
  }
  {
    std::string b = good;
    patch_u32(b, 8, 99);
    if (fails_with(b, CheckpointVersionError{""})) ++negatives; else wrong += " version";
  }
  if (fails_with(good.substr(0, good.size() - 10), CheckpointTruncatedError{""})) ++negatives;
  else wrong += " truncation";
  {
    std::string b = good;
    b[count_off + 8] = 'Z';  // first byte of the first tensor name
    if (fails_with(b, CheckpointUnknownTensorError{""})) ++negatives; else wrong += " unknown";
  }
  {
    const Index last = model.params.count() - 1;
    const std::string& name = model.params.name(last);
    const Tensor& t = model.params.slot(last);
    const std::size_t record =
        4 + name.size() + 4 + 8 * t.shape.size() + 4 * static_cast<std::size_t>(t.numel());
    std::string b = good.substr(0, good.size() - record);
    patch_u32(b, count_off, static_cast<std::uint32_t>(model.params.count() - 1));
    if (fails_with(b, CheckpointFormatError{""})) ++negatives; else wrong += " missing";
  }
  if (fails_with(good + "???", CheckpointFormatError{""})) ++negatives;
  else wrong += " trailing";

  Outcome o;
  o.ok = bad == 0 && roundtrips == 10 && negatives == 6;
  o.detail = std::to_string(roundtrips) + " random models round-trip bitwise, " +
             std::to_string(negatives) + "/6 corruption cases raise their own error";
  if (!wrong.empty()) o.detail += " (wrong class:" + wrong + ")";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Index only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (arg == "--verbose") {
      setenv("NAST_ACCEPT_LOG", "1", 1);
    } else {
      std::cerr << "usage: acceptance [--only N] [--verbose]\n";
      return 2;
    }
  }

  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"lattice oracle suite", criterion_oracle_suite},
      {"gradient suite", criterion_grad_suite},
      {"worked-value spot checks", criterion_worked_values},
      {"streaming equivalence", criterion_streaming_equivalence},
      {"causality beyond the wait horizon", criterion_causality},
      {"copy task convergence", criterion_copy_task},
      {"reordering trends", criterion_reordering_trends},
      {"latency metric hand checks", criterion_metric_hand_checks},
      {"checkpoint persistence", criterion_persistence},
  };

  bool all_ok = true;
  for (Index i = 0; i < 9; ++i) {
    if (only != 0 && only != i + 1) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail = std::string("exception: ") + e.what();
    }
    all_ok = all_ok && out.ok;
    std::cout << "criterion " << (i + 1) << " (" << criteria[i].first
              << "): " << (out.ok ? "pass" : "FAIL") << " — " << out.detail << std::endl;
  }
  return all_ok ? 0 : 1;
}
