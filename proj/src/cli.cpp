#include "nast/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nast/checkpoint.hpp"
#include "nast/metrics.hpp"
#include "nast/stream.hpp"
#include "nast/suites.hpp"
#include "nast/train.hpp"

namespace nast {

namespace {

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

struct SynthOpts {
  std::string task = "copy";
  std::string out;
  Index n = 1000;
  Index len_min = 5;
  Index len_max = 20;
  Index vocab = 32;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthOpts& o) {
  SynthSpec spec;
  spec.task = parse_task(o.task);
  spec.n = o.n;
  spec.len_min = o.len_min;
  spec.len_max = o.len_max;
  spec.vocab_size = o.vocab;
  spec.seed = o.seed;
  const SynthResult res = synth_generate(spec);
  std::filesystem::create_directories(o.out);
  save_corpus(o.out, "corpus", res.corpus, res.vocab);
  res.vocab.save(o.out + "/vocab.txt");
  std::cout << "wrote " << res.corpus.pairs.size() << " pairs to " << o.out << "\n";
  return 0;
}

struct TrainOpts {
  std::string train_src, train_tgt, dev_src, dev_tgt;
  std::string vocab_path, init, config_path, out;
  TrainConfig tc;
  ModelConfig mc;
};

int cmd_train(const CLI::App* sub, TrainOpts& o) {
  const auto passed = [&](const std::string& flag) { return sub->count(flag) > 0; };
  ConfigFile file;
  if (!o.config_path.empty()) file = ConfigFile::parse(read_text_file(o.config_path));

  TrainConfig tc = train_from_config(file);
  if (passed("--stage")) tc.stage = o.tc.stage;
  if (passed("--steps")) tc.steps = o.tc.steps;
  if (passed("--batch-tokens")) tc.batch_tokens = o.tc.batch_tokens;
  if (passed("--lr")) tc.lr_peak = o.tc.lr_peak;
  if (passed("--warmup")) tc.warmup_steps = o.tc.warmup_steps;
  if (passed("--smoothing")) tc.label_smoothing = o.tc.label_smoothing;
  if (passed("--glance-start")) tc.glancing.start = o.tc.glancing.start;
  if (passed("--glance-end")) tc.glancing.end = o.tc.glancing.end;
  if (passed("--glance-anneal")) tc.glancing.anneal_steps = o.tc.glancing.anneal_steps;
  if (passed("--l-min")) tc.l_min = o.tc.l_min;
  if (passed("--seed")) tc.seed = o.tc.seed;
  if (passed("--log-every")) tc.log_every = o.tc.log_every;
  if (passed("--eval-every")) tc.eval_every = o.tc.eval_every;
  if (passed("--early-stop")) tc.early_stop_exact = o.tc.early_stop_exact;
  if (passed("--warm-start-tol")) tc.warm_start_tolerance = o.tc.warm_start_tolerance;

  Vocab vocab;
  Model model;
  if (!o.init.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(o.init);
    vocab = std::move(loaded.vocab);
    model = std::move(loaded.model);
    // The architecture is fixed by the checkpoint; only the chunk wait and
    // dropout may change between stages.
    if (passed("--k")) model.config.wait_k = o.mc.wait_k;
    if (passed("--dropout")) model.config.dropout = o.mc.dropout;
  } else {
    if (o.vocab_path.empty()) throw ConfigError("train: --vocab is required without --init");
    if (tc.stage == 2) throw ConfigError("train: stage 2 needs a stage-1 checkpoint via --init");
    vocab = Vocab::load(o.vocab_path);
    ModelConfig mc = ModelConfig::from_config(file);
    if (passed("--dim")) mc.embed_dim = o.mc.embed_dim;
    if (passed("--heads")) mc.heads = o.mc.heads;
    if (passed("--ffn")) mc.ffn_dim = o.mc.ffn_dim;
    if (passed("--enc-layers")) mc.enc_layers = o.mc.enc_layers;
    if (passed("--dec-layers")) mc.dec_layers = o.mc.dec_layers;
    if (passed("--upsample")) mc.upsample = o.mc.upsample;
    if (passed("--k")) mc.wait_k = o.mc.wait_k;
    if (passed("--dropout")) mc.dropout = o.mc.dropout;
    if (passed("--max-positions")) mc.max_positions = o.mc.max_positions;
    mc.vocab_size = vocab.size();
    mc.validate();
    model = Model::init(mc, tc.seed);
  }

  ParallelCorpus train = load_corpus(o.train_src, o.train_tgt, vocab);
  filter_infeasible(train, model.config.upsample);
  std::cout << "train pairs " << train.pairs.size() << " (dropped " << train.dropped << ")\n";
  ParallelCorpus dev;
  if (!o.dev_src.empty()) {
    dev = load_corpus(o.dev_src, o.dev_tgt, vocab);
    filter_infeasible(dev, model.config.upsample);
    std::cout << "dev pairs " << dev.pairs.size() << " (dropped " << dev.dropped << ")\n";
  }

  Trainer trainer(model, std::move(train), std::move(dev), tc);
  trainer.sink = [](const std::string& line) { std::cout << line << "\n"; };
  trainer.run();

  ConfigFile extra;
  vocab_to_config(vocab, extra);
  train_to_config(tc, extra);
  save_checkpoint(o.out, model, extra);
  std::cout << "saved " << o.out << "\n";
  return 0;
}

struct TranslateOpts {
  std::string model_path, src, out, trace;
  Index k = 0;
  std::string collapse = "paper-literal";
};

int cmd_translate(const CLI::App* sub, const TranslateOpts& o) {
  const LoadedCheckpoint ck = load_checkpoint(o.model_path);
  const CollapseMode mode = parse_collapse_mode(o.collapse);
  const Index k = sub->count("--k") > 0 ? o.k : ck.model.config.wait_k;
  const std::vector<std::string> lines = read_lines(o.src);
  std::vector<std::string> hyps;
  std::vector<ReadWriteTrace> traces;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::vector<Index> ids = ck.vocab.encode_line(lines[i]);
    if (ids.empty()) {
      throw ConfigError("translate: empty source line " + std::to_string(i + 1));
    }
    StreamSession session(ck.model, k, mode);
    for (Index tok : ids) session.push(tok);
    session.finalize();
    hyps.push_back(ck.vocab.decode(session.hypothesis()));
    traces.push_back(session.trace());
  }
  write_lines(o.out, hyps);
  if (!o.trace.empty()) write_text_file(o.trace, serialize_traces(traces, ck.vocab));
  std::cout << "translated " << lines.size() << " sentences (k=" << k << ", "
            << collapse_mode_name(mode) << ")\n";
  return 0;
}

struct EvaluateOpts {
  std::string hyp, ref, trace, src, links, csv;
};

int cmd_evaluate(const EvaluateOpts& o) {
  const std::vector<std::string> hyp_lines = read_lines(o.hyp);
  const std::vector<std::string> ref_lines = read_lines(o.ref);
  if (hyp_lines.size() != ref_lines.size()) {
    throw ConfigError("evaluate: hypothesis/reference line counts differ");
  }
  const Index n = static_cast<Index>(hyp_lines.size());
  std::vector<Tokens> hyps, refs;
  for (Index i = 0; i < n; ++i) {
    hyps.push_back(split_tokens(hyp_lines[static_cast<std::size_t>(i)]));
    refs.push_back(split_tokens(ref_lines[static_cast<std::size_t>(i)]));
  }

  std::vector<std::pair<std::string, std::string>> report;
  report.emplace_back("sentences", std::to_string(n));
  report.emplace_back("bleu", fmt(corpus_bleu(hyps, refs)));

  if (!o.trace.empty()) {
    const Vocab trace_vocab;  // token identities are irrelevant for lag metrics
    const std::vector<ReadWriteTrace> traces =
        parse_traces(read_text_file(o.trace), trace_vocab);
    if (static_cast<Index>(traces.size()) != n) {
      throw ConfigError("evaluate: trace count does not match corpus");
    }
    LatencyReport sum;
    Index used = 0, clamped = 0, skipped = 0;
    for (const auto& trace : traces) {
      const PolicyRecord p = policy_from_trace(trace);
      if (p.g.empty()) {
        ++skipped;
        continue;
      }
      if (std::find(p.g.begin(), p.g.end(), p.src_len) == p.g.end()) ++clamped;
      const LatencyReport r = latency_metrics(p, true);
      sum.al += r.al;
      sum.ap += r.ap;
      sum.cw += r.cw;
      sum.dal += r.dal;
      ++used;
    }
    if (used > 0) {
      report.emplace_back("al", fmt(sum.al / static_cast<double>(used)));
      report.emplace_back("ap", fmt(sum.ap / static_cast<double>(used)));
      report.emplace_back("cw", fmt(sum.cw / static_cast<double>(used)));
      report.emplace_back("dal", fmt(sum.dal / static_cast<double>(used)));
    }
    report.emplace_back("latency_sentences", std::to_string(used));
    report.emplace_back("latency_clamped", std::to_string(clamped));
    if (skipped > 0) report.emplace_back("latency_skipped", std::to_string(skipped));
  }

  if (!o.src.empty()) {
    // A hypothesis token counts as grounded when the source contains an
    // identical token; synthetic tasks carry tokens across unchanged.
    const std::vector<std::string> src_lines = read_lines(o.src);
    if (static_cast<Index>(src_lines.size()) != n) {
      throw ConfigError("evaluate: source count does not match corpus");
    }
    Index total = 0, uncovered = 0;
    for (Index i = 0; i < n; ++i) {
      const Tokens src_toks = split_tokens(src_lines[static_cast<std::size_t>(i)]);
      for (const auto& tok : hyps[static_cast<std::size_t>(i)]) {
        ++total;
        if (std::find(src_toks.begin(), src_toks.end(), tok) == src_toks.end()) ++uncovered;
      }
    }
    report.emplace_back("hallucination",
                        fmt(total > 0 ? static_cast<double>(uncovered) / static_cast<double>(total)
                                      : 0.0));
  }

  if (!o.links.empty()) {
    const std::vector<std::string> link_lines = read_lines(o.links);
    if (static_cast<Index>(link_lines.size()) != n) {
      throw ConfigError("evaluate: link count does not match corpus");
    }
    std::vector<AlignmentLinks> link_sets;
    for (const auto& line : link_lines) link_sets.push_back(parse_links_line(line));
    const DifficultyPartition part = partition_by_difficulty(link_sets);
    const auto bucket_bleu = [&](const std::vector<Index>& idx, const std::string& name) {
      if (idx.empty()) return;
      std::vector<Tokens> h, r;
      double crosses = 0;
      for (Index i : idx) {
        h.push_back(hyps[static_cast<std::size_t>(i)]);
        r.push_back(refs[static_cast<std::size_t>(i)]);
        crosses += static_cast<double>(cross_count(link_sets[static_cast<std::size_t>(i)]));
      }
      report.emplace_back("bleu_" + name, fmt(corpus_bleu(h, r)));
      report.emplace_back("crosses_" + name, fmt(crosses / static_cast<double>(idx.size())));
    };
    bucket_bleu(part.easy, "easy");
    bucket_bleu(part.medium, "medium");
    bucket_bleu(part.hard, "hard");
  }

  for (const auto& [key, value] : report) std::cout << key << " " << value << "\n";
  if (!o.csv.empty()) {
    std::ostringstream os;
    for (const auto& [key, value] : report) os << key << "," << value << "\n";
    write_text_file(o.csv, os.str());
  }
  return 0;
}

struct SuiteOpts {
  Index instances = 0;
  double tol = 0;
  std::uint64_t seed = 1;
};

int cmd_suite(bool grad, const SuiteOpts& o) {
  const auto progress = [](const std::string& line) { std::cout << line << "\n"; };
  const SuiteReport rep = grad ? run_grad_suite(o.instances, o.tol, o.seed, progress)
                               : run_oracle_suite(o.instances, o.tol, o.seed, progress);
  std::cout << (grad ? "grad" : "oracle") << " suite: " << rep.instances << " instances, "
            << rep.checks << " checks, " << rep.failures << " failures, worst error "
            << rep.worst_err;
  if (!rep.worst_case.empty()) std::cout << " (" << rep.worst_case << ")";
  if (rep.retries > 0) std::cout << ", retries " << rep.retries;
  std::cout << (rep.pass() ? " -- pass" : " -- FAIL") << "\n";
  return rep.pass() ? 0 : 1;
}

}  // namespace

int run_command(int argc, const char* const* argv) {
  CLI::App app{"nast: chunked non-autoregressive simultaneous translation"};
  app.require_subcommand(1);

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic parallel corpus");
  synth->add_option("--task", so.task, "copy | local-swap | sov2svo");
  synth->add_option("--n", so.n, "number of sentence pairs")->required();
  synth->add_option("--len-min", so.len_min, "minimum source length");
  synth->add_option("--len-max", so.len_max, "maximum source length");
  synth->add_option("--vocab", so.vocab, "content vocabulary size");
  synth->add_option("--seed", so.seed, "generator seed");
  synth->add_option("--out", so.out, "output directory")->required();

  TrainOpts to;
  CLI::App* train = app.add_subcommand("train", "train a model (stage 1 or 2)");
  train->add_option("--train-src", to.train_src)->required();
  train->add_option("--train-tgt", to.train_tgt)->required();
  train->add_option("--dev-src", to.dev_src);
  train->add_option("--dev-tgt", to.dev_tgt);
  train->add_option("--vocab", to.vocab_path, "vocabulary file (fresh models)");
  train->add_option("--init", to.init, "starting checkpoint");
  train->add_option("--config", to.config_path, "config file; flags override it");
  train->add_option("--out", to.out, "checkpoint to write")->required();
  train->add_option("--stage", to.tc.stage, "1: alignment likelihood, 2: bigram+latency");
  train->add_option("--steps", to.tc.steps);
  train->add_option("--batch-tokens", to.tc.batch_tokens);
  train->add_option("--lr", to.tc.lr_peak);
  train->add_option("--warmup", to.tc.warmup_steps);
  train->add_option("--smoothing", to.tc.label_smoothing);
  train->add_option("--glance-start", to.tc.glancing.start);
  train->add_option("--glance-end", to.tc.glancing.end);
  train->add_option("--glance-anneal", to.tc.glancing.anneal_steps);
  train->add_option("--l-min", to.tc.l_min, "lag floor for the latency term");
  train->add_option("--seed", to.tc.seed);
  train->add_option("--log-every", to.tc.log_every);
  train->add_option("--eval-every", to.tc.eval_every);
  train->add_option("--early-stop", to.tc.early_stop_exact, "dev exact-match target");
  train->add_option("--warm-start-tol", to.tc.warm_start_tolerance);
  train->add_option("--dim", to.mc.embed_dim);
  train->add_option("--heads", to.mc.heads);
  train->add_option("--ffn", to.mc.ffn_dim);
  train->add_option("--enc-layers", to.mc.enc_layers);
  train->add_option("--dec-layers", to.mc.dec_layers);
  train->add_option("--upsample", to.mc.upsample);
  train->add_option("--k", to.mc.wait_k, "chunk wait");
  train->add_option("--dropout", to.mc.dropout);
  train->add_option("--max-positions", to.mc.max_positions);

  TranslateOpts xo;
  CLI::App* translate = app.add_subcommand("translate", "stream a source file through a model");
  translate->add_option("--model", xo.model_path)->required();
  translate->add_option("--src", xo.src)->required();
  translate->add_option("--out", xo.out)->required();
  translate->add_option("--trace", xo.trace, "write read/write traces here");
  translate->add_option("--k", xo.k, "chunk wait (defaults to the checkpoint's)");
  translate->add_option("--collapse", xo.collapse, "paper-literal | exact");

  EvaluateOpts eo;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score hypotheses");
  evaluate->add_option("--hyp", eo.hyp)->required();
  evaluate->add_option("--ref", eo.ref)->required();
  evaluate->add_option("--trace", eo.trace, "traces for latency metrics");
  evaluate->add_option("--src", eo.src, "source file for hallucination rate");
  evaluate->add_option("--links", eo.links, "gold links for difficulty buckets");
  evaluate->add_option("--csv", eo.csv, "also write the report as CSV");

  SuiteOpts go{60, 1e-4, 1};
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--instances", go.instances);
  gradcheck->add_option("--tol", go.tol);
  gradcheck->add_option("--seed", go.seed);

  SuiteOpts oo{600, 1e-6, 1};
  CLI::App* oracle = app.add_subcommand("oracle", "enumeration oracle suite");
  oracle->add_option("--instances", oo.instances);
  oracle->add_option("--tol", oo.tol);
  oracle->add_option("--seed", oo.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(so);
    if (train->parsed()) return cmd_train(train, to);
    if (translate->parsed()) return cmd_translate(translate, xo);
    if (evaluate->parsed()) return cmd_evaluate(eo);
    if (gradcheck->parsed()) return cmd_suite(true, go);
    if (oracle->parsed()) return cmd_suite(false, oo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace nast
