#include "nast/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nast/stream.hpp"

namespace nast {

double anneal_ratio(Index step, const GlancingSchedule& s) {
  check_arg(step >= 0, "anneal_ratio: negative step");
  check_arg(s.anneal_steps >= 1, "anneal_ratio: anneal_steps must be positive");
  if (step >= s.anneal_steps) return s.end;
  return s.start + (s.end - s.start) * (static_cast<double>(step) / static_cast<double>(s.anneal_steps));
}

GlancingResult glancing_replace(std::vector<Index> dec_ids, std::span<const Index> y,
                                const Array& log_probs, double ratio, Rng& rng) {
  check_arg(ratio >= 0.0 && ratio <= 1.0, "glancing_replace: ratio out of [0,1]");
  check_arg(static_cast<Index>(dec_ids.size()) == log_probs.rows(),
            "glancing_replace: inputs/posterior length mismatch");
  GlancingResult out{std::move(dec_ids), {}};
  if (ratio == 0.0) return out;
  try {
    out.plan.alignment = viterbi_alignment(y, log_probs);
  } catch (const InfeasibleAlignment&) {
    out.plan.skipped = true;
    return out;
  }
  const std::vector<Index> argmax = argmax_alignment(log_probs);
  Index mismatch = 0;
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] != out.plan.alignment[i]) ++mismatch;
  }
  const Index n_rep = static_cast<Index>(std::llround(ratio * static_cast<double>(mismatch)));
  out.plan.realized_ratio =
      mismatch > 0 ? static_cast<double>(n_rep) / static_cast<double>(mismatch) : 0.0;
  if (n_rep == 0) return out;
  out.plan.replaced =
      rng.sample_without_replacement(static_cast<Index>(out.dec_ids.size()), n_rep);
  std::sort(out.plan.replaced.begin(), out.plan.replaced.end());
  for (Index p : out.plan.replaced) {
    out.dec_ids[static_cast<std::size_t>(p)] =
        out.plan.alignment[static_cast<std::size_t>(p)];
  }
  return out;
}

Var stage1_loss_op(Tape& tape, Var log_probs, std::vector<Index> y, double smoothing) {
  Var nll = tape.scale(ctc_log_prob_op(tape, log_probs, std::move(y)), -1.0);
  if (smoothing == 0.0) return nll;
  const Array& lp = tape.val(log_probs);
  const double cells = static_cast<double>(lp.numel());
  const double vocab = static_cast<double>(lp.cols());
  // KL(uniform || p) averaged over positions, up to the fixed -log V shift.
  Var kl = tape.add(tape.scale(tape.sum_all(log_probs), -1.0 / cells),
                    tape.constant(Array::scalar(-std::log(vocab))));
  return tape.add(nll, tape.scale(kl, smoothing));
}

Var stage2_loss_op(Tape& tape, Var log_probs, std::vector<Index> y, Index upsample, Index wait_k,
                   Index src_len, double l_min) {
  Var loss = nmla_loss_op(tape, log_probs, std::move(y));
  // The lag penalty only shapes the zero-wait schedule; it also needs a
  // two-token source for the lag statistic to exist.
  if (wait_k == 0 && src_len >= 2) {
    loss = tape.add(loss, latency_loss_op(tape, log_probs, upsample, wait_k, src_len, l_min));
  }
  return loss;
}

Adam::Adam(Parameters& params, double lr_peak, Index warmup_steps)
    : params_(&params), lr_peak_(lr_peak), warmup_(std::max<Index>(1, warmup_steps)) {
  check_arg(lr_peak > 0.0, "Adam: learning rate must be positive");
  for (Index i = 0; i < params.count(); ++i) {
    const std::size_t n = params.slot(i).v.size();
    grad_.emplace_back(n, 0.0);
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& g : grad_) std::fill(g.begin(), g.end(), 0.0);
}

void Adam::add_gradients(const Tape& tape, const LiftedModel& lifted) {
  check_arg(static_cast<Index>(lifted.slots.size()) == params_->count(),
            "Adam: lifted model does not match parameter store");
  for (Index i = 0; i < params_->count(); ++i) {
    const Array g = tape.grad(lifted.slots[static_cast<std::size_t>(i)]);
    auto& acc = grad_[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g.v[j];
  }
}

double Adam::lr(Index step) const {
  check_arg(step >= 1, "Adam::lr: steps are 1-based");
  const double t = static_cast<double>(step), w = static_cast<double>(warmup_);
  return step <= warmup_ ? lr_peak_ * t / w : lr_peak_ * std::sqrt(w / t);
}

void Adam::step(double grad_scale) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.98, kEps = 1e-8;
  ++t_;
  const double a = lr(t_);
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (Index i = 0; i < params_->count(); ++i) {
    auto& w = params_->slot(i).v;
    auto& g = grad_[static_cast<std::size_t>(i)];
    auto& m = m_[static_cast<std::size_t>(i)];
    auto& v = v_[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * grad_scale;
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * gj;
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * gj * gj;
      const double update = a * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kEps);
      w[j] = static_cast<float>(static_cast<double>(w[j]) - update);
    }
    std::fill(g.begin(), g.end(), 0.0);
  }
}

std::vector<Index> greedy_translate(const Model& model, std::span<const Index> src) {
  return offline_reference_decode(model, src, CollapseMode::Exact);
}

void train_to_config(const TrainConfig& tc, ConfigFile& config) {
  const std::string s = "train";
  config.set(s, "stage", std::to_string(tc.stage));
  config.set(s, "steps", std::to_string(tc.steps));
  config.set(s, "batch_tokens", std::to_string(tc.batch_tokens));
  config.set(s, "lr_peak", std::to_string(tc.lr_peak));
  config.set(s, "warmup_steps", std::to_string(tc.warmup_steps));
  config.set(s, "label_smoothing", std::to_string(tc.label_smoothing));
  config.set(s, "glance_start", std::to_string(tc.glancing.start));
  config.set(s, "glance_end", std::to_string(tc.glancing.end));
  config.set(s, "glance_anneal", std::to_string(tc.glancing.anneal_steps));
  config.set(s, "l_min", std::to_string(tc.l_min));
  config.set(s, "seed", std::to_string(tc.seed));
  config.set(s, "log_every", std::to_string(tc.log_every));
  config.set(s, "eval_every", std::to_string(tc.eval_every));
  config.set(s, "early_stop_exact", std::to_string(tc.early_stop_exact));
  config.set(s, "warm_start_tolerance", std::to_string(tc.warm_start_tolerance));
}

TrainConfig train_from_config(const ConfigFile& config, TrainConfig base) {
  const std::string s = "train";
  TrainConfig tc = base;
  tc.stage = config.get_int(s, "stage", tc.stage);
  tc.steps = config.get_int(s, "steps", tc.steps);
  tc.batch_tokens = config.get_int(s, "batch_tokens", tc.batch_tokens);
  tc.lr_peak = config.get_real(s, "lr_peak", tc.lr_peak);
  tc.warmup_steps = config.get_int(s, "warmup_steps", tc.warmup_steps);
  tc.label_smoothing = config.get_real(s, "label_smoothing", tc.label_smoothing);
  tc.glancing.start = config.get_real(s, "glance_start", tc.glancing.start);
  tc.glancing.end = config.get_real(s, "glance_end", tc.glancing.end);
  tc.glancing.anneal_steps = config.get_int(s, "glance_anneal", tc.glancing.anneal_steps);
  tc.l_min = config.get_real(s, "l_min", tc.l_min);
  tc.seed = static_cast<std::uint64_t>(config.get_int(s, "seed", static_cast<Index>(tc.seed)));
  tc.log_every = config.get_int(s, "log_every", tc.log_every);
  tc.eval_every = config.get_int(s, "eval_every", tc.eval_every);
  tc.early_stop_exact = config.get_real(s, "early_stop_exact", tc.early_stop_exact);
  tc.warm_start_tolerance = config.get_real(s, "warm_start_tolerance", tc.warm_start_tolerance);
  return tc;
}

Trainer::Trainer(Model& model, ParallelCorpus train, ParallelCorpus dev, TrainConfig cfg)
    : model_(model),
      train_(std::move(train)),
      dev_(std::move(dev)),
      cfg_(cfg),
      adam_(model.params, cfg.lr_peak, cfg.warmup_steps),
      order_rng_(cfg.seed),
      glancing_rng_(cfg.seed + 1),
      dropout_rng_(cfg.seed + 2) {
  check_arg(cfg_.stage == 1 || cfg_.stage == 2, "Trainer: stage must be 1 or 2");
  check_arg(cfg_.steps >= 0, "Trainer: negative step count");
  check_arg(cfg_.batch_tokens >= 1, "Trainer: batch budget must be positive");
  check_arg(!train_.pairs.empty(), "Trainer: empty training corpus");
  order_.resize(train_.pairs.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<Index>(i);
  cursor_ = static_cast<Index>(order_.size());  // force a shuffle on first use
}

void Trainer::emit(const std::string& line) {
  log_.push_back(line);
  if (sink) sink(line);
}

std::vector<Index> Trainer::next_batch() {
  const Index n = static_cast<Index>(order_.size());
  std::vector<Index> batch;
  Index tokens = 0;
  while (true) {
    if (cursor_ == n) {
      if (!batch.empty()) break;  // batches do not straddle epochs
      order_rng_.shuffle(order_);
      cursor_ = 0;
    }
    const Index len =
        static_cast<Index>(train_.pairs[static_cast<std::size_t>(order_[cursor_])].source.size());
    if (!batch.empty() && tokens + len > cfg_.batch_tokens) break;
    batch.push_back(order_[cursor_]);
    tokens += len;
    ++cursor_;
    if (tokens >= cfg_.batch_tokens) break;
  }
  return batch;
}

double Trainer::train_example(const SentencePair& ex, double glancing_ratio) {
  const Index ups = model_.config.upsample;
  const Index src_len = static_cast<Index>(ex.source.size());
  std::vector<Index> dec = upsample_ids(ex.source, ups);
  if (glancing_ratio > 0.0) {
    const Array posterior = decode_log_probs(model_, ex.source);
    auto glanced = glancing_replace(std::move(dec), ex.target, posterior, glancing_ratio,
                                    glancing_rng_);
    if (glanced.plan.skipped) ++glancing_skipped_;
    dec = std::move(glanced.dec_ids);
  }
  Tape tape;
  const LiftedModel lifted = lift_model(tape, model_, true);
  Rng* drop = model_.config.dropout > 0.0 ? &dropout_rng_ : nullptr;
  const ModelOutput out = model_forward(tape, lifted, ex.source, dec, drop);
  Var loss = cfg_.stage == 1
                 ? stage1_loss_op(tape, out.log_probs, ex.target, cfg_.label_smoothing)
                 : stage2_loss_op(tape, out.log_probs, ex.target, ups, model_.config.wait_k,
                                  src_len, cfg_.l_min);
  tape.backward(loss);
  adam_.add_gradients(tape, lifted);
  if (src_len >= 2) {
    batch_al_sum_ += expected_al(tape.val(out.log_probs), ups, model_.config.wait_k, src_len);
    ++batch_al_count_;
  }
  return tape.val(loss).scalar_value();
}

EvalResult Trainer::evaluate_dev() const {
  EvalResult r;
  if (dev_.pairs.empty()) return r;
  Index matches = 0;
  for (const auto& ex : dev_.pairs) {
    const Array lp = decode_log_probs(model_, ex.source);
    r.dev_nll -= ctc_log_prob(ex.target, lp);
    if (greedy_translate(model_, ex.source) == ex.target) ++matches;
  }
  r.dev_nll /= static_cast<double>(dev_.pairs.size());
  r.exact_match = static_cast<double>(matches) / static_cast<double>(dev_.pairs.size());
  return r;
}

void Trainer::run() {
  if (cfg_.stage == 2 && !dev_.pairs.empty()) initial_dev_nll_ = evaluate_dev().dev_nll;
  bool first_eval = true;
  for (step_ = 1; step_ <= cfg_.steps; ++step_) {
    const std::vector<Index> batch = next_batch();
    const double ratio = anneal_ratio(step_ - 1, cfg_.glancing);
    adam_.zero_grad();
    batch_al_sum_ = 0.0;
    batch_al_count_ = 0;
    double loss_sum = 0.0;
    for (Index idx : batch) {
      loss_sum += train_example(train_.pairs[static_cast<std::size_t>(idx)], ratio);
    }
    adam_.step(1.0 / static_cast<double>(batch.size()));
    last_loss_ = loss_sum / static_cast<double>(batch.size());

    if (step_ == 1 || (cfg_.log_every > 0 && step_ % cfg_.log_every == 0)) {
      std::ostringstream os;
      os << "step " << step_ << " loss " << last_loss_;
      if (batch_al_count_ > 0)
        os << " expected_al " << batch_al_sum_ / static_cast<double>(batch_al_count_);
      os << " lr " << adam_.lr(std::max<Index>(1, adam_.steps_taken())) << " glancing " << ratio;
      if (glancing_skipped_ > 0) os << " glancing_skipped " << glancing_skipped_;
      emit(os.str());
    }

    if (cfg_.eval_every > 0 && step_ % cfg_.eval_every == 0 && !dev_.pairs.empty()) {
      const EvalResult ev = evaluate_dev();
      std::ostringstream os;
      os << "eval step " << step_ << " exact_match " << ev.exact_match << " dev_nll "
         << ev.dev_nll;
      emit(os.str());
      if (cfg_.stage == 2 && first_eval) {
        const double delta = ev.dev_nll - initial_dev_nll_;
        warm_start_ok_ = cfg_.warm_start_tolerance < 0.0 || delta <= cfg_.warm_start_tolerance;
        std::ostringstream ws;
        ws << "warm-start dev_nll_delta " << delta
           << (warm_start_ok_ ? " within" : " EXCEEDS") << " tolerance";
        emit(ws.str());
      }
      first_eval = false;
      if (cfg_.early_stop_exact >= 0.0 && ev.exact_match >= cfg_.early_stop_exact) {
        stopped_early_ = true;
        emit("early stop at step " + std::to_string(step_));
        break;
      }
    }
  }
  if (step_ > cfg_.steps) step_ = cfg_.steps;
}

}  // namespace nast
