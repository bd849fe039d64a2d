#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nast/autodiff.hpp"
#include "nast/data.hpp"
#include "nast/tensor.hpp"

namespace nast {

struct ModelConfig {
  Index vocab_size = 0;  // full table including the reserved ids
  Index embed_dim = 64;
  Index heads = 4;
  Index ffn_dim = 128;
  Index enc_layers = 2;
  Index dec_layers = 2;
  Index upsample = 3;  // decoder positions per source token
  Index wait_k = 0;    // extra source tokens observed before each chunk decodes
  double dropout = 0.0;
  Index max_positions = 512;

  void validate() const;
  void to_config(ConfigFile& config) const;
  static ModelConfig from_config(const ConfigFile& config);
  static ModelConfig from_config(const ConfigFile& config, ModelConfig base);
};

// Source tokens observed when chunk i (1-based) is decoded.
Index chunk_moment(Index chunk, Index wait_k, Index src_len);
// Same for a 0-based decoder position.
Index position_moment(Index pos, Index upsample, Index wait_k, Index src_len);

// Attention reach expressed as per-row key-prefix limits.
struct DecodeMasks {
  std::vector<Index> enc_self;  // encoder row i sees source rows < enc_self[i]
  std::vector<Index> dec_self;  // decoder row p sees decoder rows < dec_self[p]
  std::vector<Index> cross;     // decoder row p sees encoder rows < cross[p]
};
DecodeMasks build_masks(Index src_len, Index upsample, Index wait_k);

// Each source id repeated `upsample` times, in order.
std::vector<Index> upsample_ids(std::span<const Index> src, Index upsample);

// Named float32 parameter store with a stable slot order.
class Parameters {
 public:
  Index add(const std::string& name, std::vector<Index> shape);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Index index_of(const std::string& name) const;  // -1 when absent
  Tensor& slot(Index i) { return slots_[static_cast<std::size_t>(i)].second; }
  const Tensor& slot(Index i) const { return slots_[static_cast<std::size_t>(i)].second; }
  const std::string& name(Index i) const { return slots_[static_cast<std::size_t>(i)].first; }
  Index count() const { return static_cast<Index>(slots_.size()); }
  Index total_values() const;

 private:
  std::vector<std::pair<std::string, Tensor>> slots_;
  std::unordered_map<std::string, Index> index_;
};

struct Model {
  ModelConfig config;
  Parameters params;
  Array pos_table;  // sinusoidal, [max_positions, embed_dim]; derived, not stored

  static Model init(const ModelConfig& config, std::uint64_t seed);
};

Array sinusoidal_positions(Index n, Index dim);

// Parameters widened to double tape leaves, in slot order.
struct LiftedModel {
  const Model* model = nullptr;
  std::vector<Var> slots;
  Var operator()(const std::string& name) const;
};
LiftedModel lift_model(Tape& tape, const Model& model, bool requires_grad);

// Per-token encoder states; state i depends on source tokens <= i only.
Var encoder_forward(Tape& tape, const LiftedModel& m, std::span<const Index> src,
                    Rng* dropout_rng = nullptr);

struct ModelOutput {
  Var enc_states;  // [|x|, embed_dim]
  Var log_probs;   // [upsample*|x|, vocab], rows log-normalized
};
// dec_ids are the decoder input tokens (upsampled source, possibly with
// glancing substitutions) and must have length upsample*|x|.
ModelOutput model_forward(Tape& tape, const LiftedModel& m, std::span<const Index> src,
                          std::span<const Index> dec_ids, Rng* dropout_rng = nullptr);

// Whole-source posterior without gradient bookkeeping.
Array decode_log_probs(const Model& model, std::span<const Index> src);

// Streaming forward state: source tokens arrive one at a time, decoder chunks
// are decoded in order against cached keys/values. All arithmetic follows the
// batch path row for row, so outputs are bitwise equal to decode_log_probs.
class IncrementalState {
 public:
  explicit IncrementalState(const Model& model);

  void push_source(Index token_id);
  Index source_read() const { return static_cast<Index>(src_.size()); }
  Index chunks_decoded() const { return chunks_done_; }

  // Decodes chunk chunks_decoded()+1 over everything read so far. The caller
  // schedules calls so that the read count equals the chunk's moment.
  Array decode_next_chunk();  // [upsample, vocab] log-probs

 private:
  struct GrownKv {
    Array k, v;
  };

  const Model& model_;
  std::vector<Index> src_;
  std::vector<GrownKv> enc_kv_;        // per encoder layer
  Array enc_out_;                      // final encoder states, grown row-wise
  std::vector<GrownKv> dec_self_kv_;   // per decoder layer
  std::vector<GrownKv> dec_cross_kv_;  // per decoder layer, keyed by source rows
  Index chunks_done_ = 0;
};

}  // namespace nast
