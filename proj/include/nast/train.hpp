#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nast/data.hpp"
#include "nast/lattice.hpp"
#include "nast/model.hpp"

namespace nast {

struct GlancingSchedule {
  double start = 0.5;
  double end = 0.3;
  Index anneal_steps = 1;
};

// Linear start->end over anneal_steps, clamped at end afterwards.
double anneal_ratio(Index step, const GlancingSchedule& s);

struct GlancingPlan {
  std::vector<Index> alignment;  // best alignment collapsing to y
  std::vector<Index> replaced;   // 0-based decoder positions substituted
  double realized_ratio = 0.0;   // |replaced| / mismatch count
  bool skipped = false;          // target infeasible under this length
};

struct GlancingResult {
  std::vector<Index> dec_ids;
  GlancingPlan plan;
};

// Replaces round(ratio * d) uniformly sampled decoder positions with the best
// alignment's symbol there (blank included), where d is the Hamming distance
// between the posterior argmax and that alignment. Infeasible targets leave
// the inputs unchanged and mark the plan skipped.
GlancingResult glancing_replace(std::vector<Index> dec_ids, std::span<const Index> y,
                                const Array& log_probs, double ratio, Rng& rng);

// Alignment negative log likelihood plus a uniform-smoothing penalty on the
// per-position distributions.
Var stage1_loss_op(Tape& tape, Var log_probs, std::vector<Index> y, double smoothing);

// Order-relaxed bigram loss, plus the lag penalty when the chunk wait is zero.
// l_min is the lag the penalty stops rewarding below.
Var stage2_loss_op(Tape& tape, Var log_probs, std::vector<Index> y, Index upsample, Index wait_k,
                   Index src_len, double l_min);

// Adam with inverse-sqrt decay after linear warmup. Gradients accumulate
// across examples; step() consumes them.
class Adam {
 public:
  Adam(Parameters& params, double lr_peak, Index warmup_steps);

  void zero_grad();
  void add_gradients(const Tape& tape, const LiftedModel& lifted);
  void step(double grad_scale);
  double lr(Index step) const;  // 1-based
  Index steps_taken() const { return t_; }

 private:
  Parameters* params_;
  std::vector<std::vector<double>> grad_, m_, v_;
  double lr_peak_;
  Index warmup_;
  Index t_ = 0;
};

struct TrainConfig {
  Index stage = 1;
  Index steps = 2000;
  Index batch_tokens = 256;  // source-token budget per batch
  double lr_peak = 2e-3;
  Index warmup_steps = 200;
  double label_smoothing = 0.01;
  GlancingSchedule glancing;
  double l_min = 0.0;
  std::uint64_t seed = 1;
  Index log_every = 50;
  Index eval_every = 0;            // 0 disables periodic dev evaluation
  double early_stop_exact = -1.0;  // stop once dev exact match reaches this
  double warm_start_tolerance = -1.0;  // stage 2: allowed dev NLL rise at first eval
};

void train_to_config(const TrainConfig& tc, ConfigFile& config);
TrainConfig train_from_config(const ConfigFile& config, TrainConfig base = {});

struct EvalResult {
  double exact_match = 0.0;
  double dev_nll = 0.0;  // mean alignment negative log likelihood
};

class Trainer {
 public:
  Trainer(Model& model, ParallelCorpus train, ParallelCorpus dev, TrainConfig cfg);

  void run();
  EvalResult evaluate_dev() const;

  Index steps_done() const { return step_; }
  double last_loss() const { return last_loss_; }
  Index glancing_skipped() const { return glancing_skipped_; }
  bool stopped_early() const { return stopped_early_; }
  bool warm_start_ok() const { return warm_start_ok_; }
  const std::vector<std::string>& log() const { return log_; }

  std::function<void(const std::string&)> sink;  // optional live log mirror

 private:
  std::vector<Index> next_batch();
  double train_example(const SentencePair& ex, double glancing_ratio);
  void emit(const std::string& line);

  Model& model_;
  ParallelCorpus train_;
  ParallelCorpus dev_;
  TrainConfig cfg_;
  Adam adam_;
  Rng order_rng_, glancing_rng_, dropout_rng_;
  std::vector<Index> order_;
  Index cursor_ = 0;
  Index step_ = 0;
  double last_loss_ = 0.0;
  double batch_al_sum_ = 0.0;  // expected lag accumulator for the log
  Index batch_al_count_ = 0;
  Index glancing_skipped_ = 0;
  bool stopped_early_ = false;
  bool warm_start_ok_ = true;
  double initial_dev_nll_ = 0.0;
  std::vector<std::string> log_;
};

// Greedy full-source decode followed by a global collapse; the trainer's
// exact-match currency.
std::vector<Index> greedy_translate(const Model& model, std::span<const Index> src);

}  // namespace nast
