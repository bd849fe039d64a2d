#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nast/common.hpp"

namespace nast {

// Reserved ids shared by every vocabulary: 0 is the blank symbol (also the
// CTC blank), 1 pads, 2 stands in for unknown tokens.
inline constexpr Index kPadId = 1;
inline constexpr Index kUnkId = 2;
inline constexpr Index kReservedIds = 3;

class Vocab {
 public:
  Vocab();

  // Strict insert: the token must be new, non-empty, and whitespace-free.
  Index add(const std::string& token);
  // Lookup; unknown tokens map to kUnkId.
  Index id(const std::string& token) const;
  const std::string& token(Index id) const;
  Index size() const { return static_cast<Index>(tokens_.size()); }

  std::vector<Index> encode_line(const std::string& line) const;
  std::string decode(std::span<const Index> ids) const;

  // File format: one content token per line; id = line number + reserved ids.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
  static Vocab from_lines(const std::vector<std::string>& lines);
  // All tokens including the reserved ones, in id order.
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> index_;
};

std::vector<std::string> split_tokens(const std::string& line);

struct SentencePair {
  std::vector<Index> source;
  std::vector<Index> target;
  AlignmentLinks links;  // empty when no gold alignment exists
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  Index dropped = 0;  // pairs removed by the feasibility filter
};

// Shortest alignment able to collapse to the target: every token plus one
// separating blank per equal-adjacent pair.
Index min_alignment_length(std::span<const Index> target);
bool ctc_feasible(Index source_len, std::span<const Index> target, Index upsample);
void filter_infeasible(ParallelCorpus& corpus, Index upsample);

// Plain text io; all errors carry the offending path.
std::string read_text_file(const std::string& path);
std::vector<std::string> read_lines(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
void write_lines(const std::string& path, std::span<const std::string> lines);

// Pharaoh-style "t-s" pairs, 1-based target and source positions.
AlignmentLinks parse_links_line(const std::string& line);
std::string format_links_line(const AlignmentLinks& links);

// One sentence per line, whitespace-tokenized; optional links file.
ParallelCorpus load_corpus(const std::string& src_path, const std::string& tgt_path,
                           const Vocab& vocab, const std::string& links_path = "");
void save_corpus(const std::string& dir, const std::string& name, const ParallelCorpus& corpus,
                 const Vocab& vocab);

enum class SynthTask { Copy, LocalSwap, Sov2Svo };
SynthTask parse_task(const std::string& name);

struct SynthSpec {
  SynthTask task = SynthTask::Copy;
  Index n = 0;
  Index len_min = 5;
  Index len_max = 20;
  Index vocab_size = 32;  // content tokens, excluding the reserved ids
  std::uint64_t seed = 1;
};

struct SynthResult {
  ParallelCorpus corpus;
  Vocab vocab;
};

// Deterministic under its seed. Copy and local-swap draw tokens uniformly in
// the requested length range. The reorder task builds sources as three token
// class spans in order S,O,V and targets reordered to S,V,O; span lengths are
// structural (short S and V spans, one long O span) so that emitting the
// verb span on time requires anticipating source tokens that have not yet
// arrived unless the chunk wait covers the gap.
SynthResult synth_generate(const SynthSpec& spec);

// Line-oriented "key = value" pairs under [section] headers; '#' comments.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  std::string serialize() const;

  const std::string* find(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
  bool has_section(const std::string& section) const;

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  Index get_int(const std::string& section, const std::string& key, Index fallback) const;
  double get_real(const std::string& section, const std::string& key, double fallback) const;

  using Section = std::vector<std::pair<std::string, std::string>>;
  const std::vector<std::pair<std::string, Section>>& sections() const { return sections_; }

 private:
  std::vector<std::pair<std::string, Section>> sections_;
  Section* section_ptr(const std::string& name);
  const Section* section_ptr(const std::string& name) const;
};

// Vocab embedding in config form, so checkpoints are self-contained.
void vocab_to_config(const Vocab& vocab, ConfigFile& config);
Vocab vocab_from_config(const ConfigFile& config);

}  // namespace nast
