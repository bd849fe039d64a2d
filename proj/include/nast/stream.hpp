#pragma once

#include <span>
#include <string>
#include <vector>

#include "nast/data.hpp"
#include "nast/lattice.hpp"
#include "nast/model.hpp"

namespace nast {

// How collapsed chunks join across chunk boundaries. PaperLiteral merges when
// the new chunk's first token equals the last emitted token. Exact carries
// the previous chunk's final raw symbol (blank included), which reproduces a
// global collapse of the whole alignment: a trailing blank blocks the merge.
enum class CollapseMode { PaperLiteral, Exact };
CollapseMode parse_collapse_mode(const std::string& name);
std::string collapse_mode_name(CollapseMode mode);

class ChunkMerger {
 public:
  explicit ChunkMerger(CollapseMode mode) : mode_(mode) {}
  // Returns the tokens newly emitted by this chunk.
  std::vector<Index> feed(std::span<const Index> raw_chunk);

 private:
  CollapseMode mode_;
  bool have_prev_ = false;
  Index prev_ = kBlankId;  // last emitted token, or last raw symbol in Exact mode
};

// Model-free reference path: split a full raw alignment into chunks and merge.
std::vector<Index> merge_chunks(std::span<const Index> raw, Index upsample, CollapseMode mode);

// Greedy per-row decode.
std::vector<Index> argmax_alignment(const Array& log_probs);

struct TraceEvent {
  enum class Kind { Read, Write };
  Kind kind = Kind::Read;
  Index value = 0;        // 1-based source position for reads, token id for writes
  Index tokens_read = 0;  // reads completed when the event happened
};

struct ReadWriteTrace {
  std::vector<TraceEvent> events;

  Index read_count() const;
  std::vector<Index> write_tokens() const;
  // Lag policy: reads completed when each output token was written.
  std::vector<Index> write_g() const;
};

// One event per line: "read <pos> <reads>" / "write <token> <reads>";
// sentences are separated by a blank line.
std::string serialize_traces(std::span<const ReadWriteTrace> traces, const Vocab& vocab);
std::vector<ReadWriteTrace> parse_traces(const std::string& text, const Vocab& vocab);

// Simultaneous decoding session: source tokens go in one at a time, chunk
// i decodes as soon as i + wait_k tokens have been read, the rest decode at
// finalize with full-source conditioning.
class StreamSession {
 public:
  StreamSession(const Model& model, Index wait_k, CollapseMode mode);

  std::vector<Index> push(Index src_token);
  std::vector<Index> finalize();
  bool finalized() const { return finalized_; }

  const std::vector<Index>& hypothesis() const { return hypothesis_; }
  const ReadWriteTrace& trace() const;

 private:
  std::vector<Index> decode_one_chunk();

  IncrementalState inc_;
  ChunkMerger merger_;
  Index wait_k_;
  bool finalized_ = false;
  ReadWriteTrace trace_;
  std::vector<Index> hypothesis_;
};

// Full-source batch decode, collapsed per mode (global collapse for Exact,
// chunk-wise merging for PaperLiteral).
std::vector<Index> offline_reference_decode(const Model& model, std::span<const Index> src,
                                            CollapseMode mode);

}  // namespace nast
