#include "nast/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nast/rng.hpp"

namespace nast {

namespace {

bool has_whitespace(const std::string& s) {
  return std::any_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

Index parse_index(const std::string& s, const std::string& what) {
  Index value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("not an integer for " + what + ": '" + s + "'");
  return value;
}

}  // namespace

Vocab::Vocab() {
  for (const char* t : {"<blank>", "<pad>", "<unk>"}) {
    index_.emplace(t, static_cast<Index>(tokens_.size()));
    tokens_.emplace_back(t);
  }
}

Index Vocab::add(const std::string& token) {
  if (token.empty() || has_whitespace(token))
    throw ContractViolation("vocab token must be non-empty without whitespace: '" + token + "'");
  if (index_.count(token)) throw ContractViolation("duplicate vocab token: '" + token + "'");
  const Index id = static_cast<Index>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

Index Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(Index id) const {
  if (id < 0 || id >= size()) throw ContractViolation("vocab id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<Index> Vocab::encode_line(const std::string& line) const {
  std::vector<Index> ids;
  for (const auto& tok : split_tokens(line)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(std::span<const Index> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::vector<std::string> lines(tokens_.begin() + kReservedIds, tokens_.end());
  write_lines(path, lines);
}

Vocab Vocab::load(const std::string& path) { return from_lines(read_lines(path)); }

Vocab Vocab::from_lines(const std::vector<std::string>& lines) {
  Vocab v;
  for (const auto& line : lines) {
    const std::string tok = trim(line);
    if (!tok.empty()) v.add(tok);
  }
  return v;
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

Index min_alignment_length(std::span<const Index> target) {
  Index len = static_cast<Index>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++len;
  return len;
}

bool ctc_feasible(Index source_len, std::span<const Index> target, Index upsample) {
  return upsample * source_len >= min_alignment_length(target);
}

void filter_infeasible(ParallelCorpus& corpus, Index upsample) {
  std::vector<SentencePair> kept;
  kept.reserve(corpus.pairs.size());
  for (auto& pair : corpus.pairs) {
    if (!pair.source.empty() &&
        ctc_feasible(static_cast<Index>(pair.source.size()), pair.target, upsample))
      kept.push_back(std::move(pair));
    else
      ++corpus.dropped;
  }
  corpus.pairs = std::move(kept);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return buf.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) lines.push_back(std::move(cur));
  return lines;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void write_lines(const std::string& path, std::span<const std::string> lines) {
  std::string text;
  for (const auto& line : lines) {
    text += line;
    text += '\n';
  }
  write_text_file(path, text);
}

AlignmentLinks parse_links_line(const std::string& line) {
  AlignmentLinks links;
  for (const auto& tok : split_tokens(line)) {
    const auto dash = tok.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 == tok.size())
      throw IoError("malformed link token: '" + tok + "'");
    links.emplace_back(parse_index(tok.substr(0, dash), "link target"),
                       parse_index(tok.substr(dash + 1), "link source"));
  }
  return links;
}

std::string format_links_line(const AlignmentLinks& links) {
  std::string out;
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(links[i].first) + "-" + std::to_string(links[i].second);
  }
  return out;
}

ParallelCorpus load_corpus(const std::string& src_path, const std::string& tgt_path,
                           const Vocab& vocab, const std::string& links_path) {
  const auto src_lines = read_lines(src_path);
  const auto tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw ContractViolation("source/target line counts differ: " + src_path + " vs " + tgt_path);
  std::vector<std::string> link_lines;
  if (!links_path.empty()) {
    link_lines = read_lines(links_path);
    if (link_lines.size() != src_lines.size())
      throw ContractViolation("links line count differs from corpus: " + links_path);
  }
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    SentencePair pair;
    pair.source = vocab.encode_line(src_lines[i]);
    pair.target = vocab.encode_line(tgt_lines[i]);
    if (!link_lines.empty()) pair.links = parse_links_line(link_lines[i]);
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

void save_corpus(const std::string& dir, const std::string& name, const ParallelCorpus& corpus,
                 const Vocab& vocab) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> src, tgt, links;
  for (const auto& pair : corpus.pairs) {
    src.push_back(vocab.decode(pair.source));
    tgt.push_back(vocab.decode(pair.target));
    links.push_back(format_links_line(pair.links));
  }
  const std::string base = dir + "/" + name;
  write_lines(base + ".src", src);
  write_lines(base + ".tgt", tgt);
  write_lines(base + ".links", links);
}

SynthTask parse_task(const std::string& name) {
  if (name == "copy") return SynthTask::Copy;
  if (name == "local-swap") return SynthTask::LocalSwap;
  if (name == "sov2svo") return SynthTask::Sov2Svo;
  throw ConfigError("unknown synthetic task: '" + name + "'");
}

namespace {

// Draw a span from [lo, hi] with no equal-adjacent tokens.
std::vector<Index> draw_span(Index len, Index lo, Index hi, Rng& rng) {
  std::vector<Index> out;
  for (Index i = 0; i < len; ++i) {
    Index tok = rng.uniform_int(lo, hi);
    while (i > 0 && tok == out.back()) tok = rng.uniform_int(lo, hi);
    out.push_back(tok);
  }
  return out;
}

SynthResult synth_reorder(const SynthSpec& spec) {
  if (spec.vocab_size < 6)
    throw ConfigError("reorder task needs at least 6 content tokens for the class partition");
  SynthResult r;
  const Index per = spec.vocab_size / 3;
  const Index n_s = per;
  const Index n_o = per;
  const Index n_v = spec.vocab_size - 2 * per;
  for (Index i = 0; i < n_s; ++i) r.vocab.add("s" + std::to_string(i));
  for (Index i = 0; i < n_o; ++i) r.vocab.add("o" + std::to_string(i));
  for (Index i = 0; i < n_v; ++i) r.vocab.add("v" + std::to_string(i));
  const Index s_lo = kReservedIds;
  const Index o_lo = s_lo + n_s;
  const Index v_lo = o_lo + n_o;

  Rng rng(spec.seed);
  for (Index e = 0; e < spec.n; ++e) {
    const Index a = rng.uniform_int(2, 4);  // subject span
    const Index c = rng.uniform_int(2, 3);  // verb span
    // Object span stays under the slot budget that opens while the verb
    // arrives (b < 2c): the reordered tail then fits a wait-0 decode, so lag
    // is genuinely tradable against fidelity instead of forced to zero.
    const Index b = 2 * c - 1 - rng.uniform_int(0, 1);
    SentencePair pair;
    const auto subj = draw_span(a, s_lo, s_lo + n_s - 1, rng);
    const auto obj = draw_span(b, o_lo, o_lo + n_o - 1, rng);
    const auto verb = draw_span(c, v_lo, v_lo + n_v - 1, rng);
    pair.source = subj;
    pair.source.insert(pair.source.end(), obj.begin(), obj.end());
    pair.source.insert(pair.source.end(), verb.begin(), verb.end());
    pair.target = subj;
    pair.target.insert(pair.target.end(), verb.begin(), verb.end());
    pair.target.insert(pair.target.end(), obj.begin(), obj.end());
    for (Index t = 1; t <= a; ++t) pair.links.emplace_back(t, t);
    for (Index j = 1; j <= c; ++j) pair.links.emplace_back(a + j, a + b + j);
    for (Index j = 1; j <= b; ++j) pair.links.emplace_back(a + c + j, a + j);
    r.corpus.pairs.push_back(std::move(pair));
  }
  return r;
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec) {
  check_arg(spec.n >= 0, "synth: negative corpus size");
  check_arg(spec.len_min >= 1 && spec.len_min <= spec.len_max, "synth: bad length range");
  check_arg(spec.vocab_size >= 1, "synth: vocab size must be positive");
  if (spec.task == SynthTask::Sov2Svo) return synth_reorder(spec);

  SynthResult r;
  for (Index i = 0; i < spec.vocab_size; ++i) r.vocab.add("w" + std::to_string(i));
  Rng rng(spec.seed);
  const Index lo = kReservedIds;
  const Index hi = kReservedIds + spec.vocab_size - 1;
  for (Index e = 0; e < spec.n; ++e) {
    const Index len = rng.uniform_int(spec.len_min, spec.len_max);
    SentencePair pair;
    for (Index i = 0; i < len; ++i) pair.source.push_back(rng.uniform_int(lo, hi));
    std::vector<Index> perm(static_cast<std::size_t>(len));
    for (Index i = 0; i < len; ++i) perm[static_cast<std::size_t>(i)] = i;
    if (spec.task == SynthTask::LocalSwap) {
      for (Index i = 0; i + 1 < len; i += 2)
        if (rng.uniform() < 0.5)
          std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(i + 1)]);
    }
    for (Index t = 0; t < len; ++t) {
      pair.target.push_back(pair.source[static_cast<std::size_t>(perm[static_cast<std::size_t>(t)])]);
      pair.links.emplace_back(t + 1, perm[static_cast<std::size_t>(t)] + 1);
    }
    r.corpus.pairs.push_back(std::move(pair));
  }
  return r;
}

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  Index line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("unterminated section header at line " + std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (!cfg.section_ptr(section)) cfg.sections_.emplace_back(section, Section{});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value' at line " + std::to_string(line_no) + ": '" +
                        line + "'");
    cfg.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

std::string ConfigFile::serialize() const {
  std::string out;
  for (const auto& [name, entries] : sections_) {
    if (!name.empty()) out += "[" + name + "]\n";
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  }
  return out;
}

ConfigFile::Section* ConfigFile::section_ptr(const std::string& name) {
  for (auto& [s, entries] : sections_)
    if (s == name) return &entries;
  return nullptr;
}

const ConfigFile::Section* ConfigFile::section_ptr(const std::string& name) const {
  for (const auto& [s, entries] : sections_)
    if (s == name) return &entries;
  return nullptr;
}

const std::string* ConfigFile::find(const std::string& section, const std::string& key) const {
  const Section* s = section_ptr(section);
  if (!s) return nullptr;
  for (const auto& [k, v] : *s)
    if (k == key) return &v;
  return nullptr;
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  if (key.empty()) throw ConfigError("empty config key in section [" + section + "]");
  Section* s = section_ptr(section);
  if (!s) {
    sections_.emplace_back(section, Section{});
    s = &sections_.back().second;
  }
  for (auto& [k, v] : *s) {
    if (k == key) {
      v = value;
      return;
    }
  }
  s->emplace_back(key, value);
}

bool ConfigFile::has_section(const std::string& section) const {
  return section_ptr(section) != nullptr;
}

std::string ConfigFile::get_str(const std::string& section, const std::string& key,
                                const std::string& fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

Index ConfigFile::get_int(const std::string& section, const std::string& key,
                          Index fallback) const {
  const std::string* v = find(section, key);
  return v ? parse_index(*v, "[" + section + "] " + key) : fallback;
}

double ConfigFile::get_real(const std::string& section, const std::string& key,
                            double fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const double parsed = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("not a number for [" + section + "] " + key + ": '" + *v + "'");
  }
}

void vocab_to_config(const Vocab& vocab, ConfigFile& config) {
  const auto& toks = vocab.tokens();
  config.set("vocab", "size", std::to_string(vocab.size() - kReservedIds));
  for (Index i = kReservedIds; i < vocab.size(); ++i)
    config.set("vocab", "tok" + std::to_string(i - kReservedIds),
               toks[static_cast<std::size_t>(i)]);
}

Vocab vocab_from_config(const ConfigFile& config) {
  const Index n = config.get_int("vocab", "size", -1);
  if (n < 0) throw ConfigError("config lacks a [vocab] section with size");
  Vocab v;
  for (Index i = 0; i < n; ++i) {
    const std::string* tok = config.find("vocab", "tok" + std::to_string(i));
    if (!tok) throw ConfigError("config [vocab] missing tok" + std::to_string(i));
    v.add(*tok);
  }
  return v;
}

}  // namespace nast
