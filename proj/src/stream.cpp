#include "nast/stream.hpp"

#include <cassert>
#include <charconv>
#include <sstream>

namespace nast {

CollapseMode parse_collapse_mode(const std::string& name) {
  if (name == "paper-literal") return CollapseMode::PaperLiteral;
  if (name == "exact") return CollapseMode::Exact;
  throw ConfigError("unknown collapse mode '" + name + "' (expected paper-literal or exact)");
}

std::string collapse_mode_name(CollapseMode mode) {
  return mode == CollapseMode::PaperLiteral ? "paper-literal" : "exact";
}

std::vector<Index> ChunkMerger::feed(std::span<const Index> raw_chunk) {
  std::vector<Index> out;
  if (mode_ == CollapseMode::PaperLiteral) {
    out = collapse(raw_chunk);
    if (have_prev_ && !out.empty() && out.front() == prev_) out.erase(out.begin());
    if (!out.empty()) {
      prev_ = out.back();
      have_prev_ = true;
    }
    return out;
  }
  // Exact: prepend the previous raw symbol so runs spanning the boundary are
  // collapsed exactly as a global pass would, then drop its survivor.
  std::vector<Index> ext;
  ext.reserve(raw_chunk.size() + 1);
  if (have_prev_) ext.push_back(prev_);
  ext.insert(ext.end(), raw_chunk.begin(), raw_chunk.end());
  out = collapse(ext);
  if (have_prev_ && prev_ != kBlankId) {
    assert(!out.empty() && out.front() == prev_);
    out.erase(out.begin());
  }
  if (!raw_chunk.empty()) {
    prev_ = raw_chunk.back();
    have_prev_ = true;
  }
  return out;
}

std::vector<Index> merge_chunks(std::span<const Index> raw, Index upsample, CollapseMode mode) {
  check_arg(upsample > 0, "merge_chunks: upsample must be positive");
  const Index n = static_cast<Index>(raw.size());
  check_arg(n % upsample == 0, "merge_chunks: raw length not a multiple of upsample");
  ChunkMerger merger(mode);
  std::vector<Index> out;
  for (Index i = 0; i < n; i += upsample) {
    auto emitted = merger.feed(raw.subspan(static_cast<std::size_t>(i), static_cast<std::size_t>(upsample)));
    out.insert(out.end(), emitted.begin(), emitted.end());
  }
  return out;
}

std::vector<Index> argmax_alignment(const Array& log_probs) {
  check_arg(log_probs.cols() > 0, "argmax_alignment: empty rows");
  std::vector<Index> out(log_probs.rows());
  for (Index t = 0; t < log_probs.rows(); ++t) {
    Index best = 0;
    for (Index v = 1; v < log_probs.cols(); ++v) {
      if (log_probs.at(t, v) > log_probs.at(t, best)) best = v;
    }
    out[t] = best;
  }
  return out;
}

Index ReadWriteTrace::read_count() const {
  Index n = 0;
  for (const auto& e : events) {
    if (e.kind == TraceEvent::Kind::Read) ++n;
  }
  return n;
}

std::vector<Index> ReadWriteTrace::write_tokens() const {
  std::vector<Index> out;
  for (const auto& e : events) {
    if (e.kind == TraceEvent::Kind::Write) out.push_back(e.value);
  }
  return out;
}

std::vector<Index> ReadWriteTrace::write_g() const {
  std::vector<Index> out;
  for (const auto& e : events) {
    if (e.kind == TraceEvent::Kind::Write) out.push_back(e.tokens_read);
  }
  return out;
}

std::string serialize_traces(std::span<const ReadWriteTrace> traces, const Vocab& vocab) {
  std::ostringstream os;
  for (const auto& trace : traces) {
    for (const auto& e : trace.events) {
      if (e.kind == TraceEvent::Kind::Read) {
        os << "read " << e.value << ' ' << e.tokens_read << '\n';
      } else {
        os << "write " << vocab.token(e.value) << ' ' << e.tokens_read << '\n';
      }
    }
    os << '\n';
  }
  return os.str();
}

namespace {

Index parse_trace_number(const std::string& field, Index line_no) {
  Index value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ConfigError("trace line " + std::to_string(line_no) + ": bad number '" + field + "'");
  }
  return value;
}

}  // namespace

std::vector<ReadWriteTrace> parse_traces(const std::string& text, const Vocab& vocab) {
  std::vector<ReadWriteTrace> traces;
  ReadWriteTrace current;
  std::istringstream is(text);
  std::string line;
  Index line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) {
      if (!current.events.empty()) {
        traces.push_back(std::move(current));
        current = ReadWriteTrace{};
      }
      continue;
    }
    std::istringstream fields(line);
    std::string kind, value, reads;
    if (!(fields >> kind >> value >> reads) || (fields >> std::ws, !fields.eof())) {
      throw ConfigError("trace line " + std::to_string(line_no) + ": expected 3 fields");
    }
    TraceEvent e;
    e.tokens_read = parse_trace_number(reads, line_no);
    if (kind == "read") {
      e.kind = TraceEvent::Kind::Read;
      e.value = parse_trace_number(value, line_no);
    } else if (kind == "write") {
      e.kind = TraceEvent::Kind::Write;
      e.value = vocab.id(value);
    } else {
      throw ConfigError("trace line " + std::to_string(line_no) + ": unknown event '" + kind + "'");
    }
    current.events.push_back(e);
  }
  if (!current.events.empty()) traces.push_back(std::move(current));
  return traces;
}

StreamSession::StreamSession(const Model& model, Index wait_k, CollapseMode mode)
    : inc_(model), merger_(mode), wait_k_(wait_k) {}

std::vector<Index> StreamSession::decode_one_chunk() {
  Array lp = inc_.decode_next_chunk();
  auto raw = argmax_alignment(lp);
  auto emitted = merger_.feed(raw);
  for (Index tok : emitted) {
    trace_.events.push_back({TraceEvent::Kind::Write, tok, inc_.source_read()});
    hypothesis_.push_back(tok);
  }
  return emitted;
}

std::vector<Index> StreamSession::push(Index src_token) {
  if (finalized_) throw StateError("push after finalize");
  inc_.push_source(src_token);
  Index reads = inc_.source_read();
  trace_.events.push_back({TraceEvent::Kind::Read, reads, reads});
  std::vector<Index> out;
  while (inc_.chunks_decoded() + 1 + wait_k_ <= reads) {
    auto emitted = decode_one_chunk();
    out.insert(out.end(), emitted.begin(), emitted.end());
  }
  return out;
}

std::vector<Index> StreamSession::finalize() {
  if (finalized_) throw StateError("finalize called twice");
  if (inc_.source_read() == 0) throw StateError("finalize with no source read");
  std::vector<Index> out;
  while (inc_.chunks_decoded() < inc_.source_read()) {
    auto emitted = decode_one_chunk();
    out.insert(out.end(), emitted.begin(), emitted.end());
  }
  finalized_ = true;
  return out;
}

const ReadWriteTrace& StreamSession::trace() const {
  if (!finalized_) throw StateError("trace requested before finalize");
  return trace_;
}

std::vector<Index> offline_reference_decode(const Model& model, std::span<const Index> src,
                                            CollapseMode mode) {
  Array lp = decode_log_probs(model, src);
  auto raw = argmax_alignment(lp);
  if (mode == CollapseMode::Exact) return collapse(raw);
  return merge_chunks(raw, model.config.upsample, mode);
}

}  // namespace nast
