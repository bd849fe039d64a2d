#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "nast/lattice.hpp"
#include "nast/model.hpp"
#include "nast/rng.hpp"
#include "nast/stream.hpp"

using namespace nast;

namespace {

constexpr Index B = kBlankId;

ModelConfig tiny_config(Index wait_k = 0) {
  ModelConfig c;
  c.vocab_size = 7;
  c.embed_dim = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.upsample = 3;
  c.wait_k = wait_k;
  c.max_positions = 96;
  return c;
}

std::vector<Index> random_raw(Index len, Index vocab, Rng& rng) {
  std::vector<Index> raw;
  for (Index i = 0; i < len; ++i) raw.push_back(rng.uniform_int(0, vocab - 1));
  return raw;
}

}  // namespace

TEST_CASE("collapse mode names round-trip") {
  CHECK(parse_collapse_mode("paper-literal") == CollapseMode::PaperLiteral);
  CHECK(parse_collapse_mode("exact") == CollapseMode::Exact);
  CHECK(collapse_mode_name(CollapseMode::PaperLiteral) == "paper-literal");
  CHECK(collapse_mode_name(CollapseMode::Exact) == "exact");
  CHECK_THROWS_AS(parse_collapse_mode("other"), ConfigError);
}

TEST_CASE("the two merge modes diverge on a chunk-final blank") {
  // raw [a, B | a, b] at upsample 2: global collapse gives [a, a, b] because
  // the blank separates the two runs of a; first-token merging fuses them.
  const Index a = 3, b = 4;
  const std::vector<Index> raw{a, B, a, b};
  CHECK(merge_chunks(raw, 2, CollapseMode::Exact) == std::vector<Index>{a, a, b});
  CHECK(merge_chunks(raw, 2, CollapseMode::PaperLiteral) == std::vector<Index>{a, b});
  CHECK(collapse(raw) == std::vector<Index>{a, a, b});
}

TEST_CASE("merge modes agree when chunks end in content") {
  const Index a = 3, b = 4;
  const std::vector<Index> raw{a, a, a, b};
  CHECK(merge_chunks(raw, 2, CollapseMode::Exact) == std::vector<Index>{a, b});
  CHECK(merge_chunks(raw, 2, CollapseMode::PaperLiteral) == std::vector<Index>{a, b});
}

TEST_CASE("exact chunk merging equals a global collapse on random alignments") {
  Rng rng(17);
  for (int it = 0; it < 500; ++it) {
    const Index upsample = rng.uniform_int(1, 4);
    const Index src_len = rng.uniform_int(1, 6);
    const std::vector<Index> raw = random_raw(src_len * upsample, 5, rng);
    CHECK(merge_chunks(raw, upsample, CollapseMode::Exact) == collapse(raw));
  }
}

TEST_CASE("chunk merger emits incrementally what the batch merge emits at once") {
  Rng rng(23);
  for (CollapseMode mode : {CollapseMode::Exact, CollapseMode::PaperLiteral}) {
    for (int it = 0; it < 200; ++it) {
      const Index upsample = rng.uniform_int(1, 3);
      const Index src_len = rng.uniform_int(1, 6);
      const std::vector<Index> raw = random_raw(src_len * upsample, 4, rng);
      ChunkMerger merger(mode);
      std::vector<Index> streamed;
      for (Index i = 0; i < src_len; ++i) {
        const std::span<const Index> chunk(raw.data() + i * upsample,
                                           static_cast<std::size_t>(upsample));
        const auto emitted = merger.feed(chunk);
        streamed.insert(streamed.end(), emitted.begin(), emitted.end());
      }
      CHECK(streamed == merge_chunks(raw, upsample, mode));
    }
  }
}

TEST_CASE("argmax ties break toward the lowest index") {
  Array lp = Array::full({2, 3}, -1.0);
  lp.at(0, 1) = -0.5;
  lp.at(1, 0) = -1.0;  // row 1 all equal
  const auto path = argmax_alignment(lp);
  CHECK(path == std::vector<Index>{1, 0});
}

TEST_CASE("traces expose read counts and lag policies") {
  ReadWriteTrace t;
  t.events.push_back({TraceEvent::Kind::Read, 1, 1});
  t.events.push_back({TraceEvent::Kind::Write, 5, 1});
  t.events.push_back({TraceEvent::Kind::Read, 2, 2});
  t.events.push_back({TraceEvent::Kind::Read, 3, 3});
  t.events.push_back({TraceEvent::Kind::Write, 6, 3});
  t.events.push_back({TraceEvent::Kind::Write, 4, 3});
  CHECK(t.read_count() == 3);
  CHECK(t.write_tokens() == std::vector<Index>{5, 6, 4});
  CHECK(t.write_g() == std::vector<Index>{1, 3, 3});
}

TEST_CASE("trace text round-trips") {
  Vocab v;
  v.add("hello");
  v.add("world");
  ReadWriteTrace a;
  a.events.push_back({TraceEvent::Kind::Read, 1, 1});
  a.events.push_back({TraceEvent::Kind::Write, v.id("hello"), 1});
  ReadWriteTrace b;
  b.events.push_back({TraceEvent::Kind::Read, 1, 1});
  b.events.push_back({TraceEvent::Kind::Read, 2, 2});
  b.events.push_back({TraceEvent::Kind::Write, v.id("world"), 2});
  const std::string text = serialize_traces(std::vector<ReadWriteTrace>{a, b}, v);
  const auto parsed = parse_traces(text, v);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].write_tokens() == a.write_tokens());
  CHECK(parsed[0].read_count() == 1);
  CHECK(parsed[1].write_g() == b.write_g());
  CHECK(parsed[1].events.size() == 3);

  CHECK_THROWS_AS(parse_traces("noise line\n", v), ConfigError);
  CHECK_THROWS_AS(parse_traces("read x 1\n", v), ConfigError);
}

TEST_CASE("session decodes eagerly and finalizes the tail") {
  for (Index k : {Index{0}, Index{2}}) {
    const Model model = Model::init(tiny_config(k), 29);
    const std::vector<Index> src{3, 4, 5, 6};
    StreamSession session(model, k, CollapseMode::Exact);
    std::vector<Index> emitted;
    for (Index i = 0; i < static_cast<Index>(src.size()); ++i) {
      const auto out = session.push(src[static_cast<std::size_t>(i)]);
      emitted.insert(emitted.end(), out.begin(), out.end());
    }
    CHECK_FALSE(session.finalized());
    const auto tail = session.finalize();
    emitted.insert(emitted.end(), tail.begin(), tail.end());
    CHECK(session.finalized());
    CHECK(session.hypothesis() == emitted);

    // the offline reference on the same source must agree token for token
    CHECK(emitted == offline_reference_decode(model, src, CollapseMode::Exact));

    // trace sanity: reads count the source, writes carry the eager schedule
    const ReadWriteTrace& trace = session.trace();
    CHECK(trace.read_count() == static_cast<Index>(src.size()));
    const auto g = trace.write_g();
    CHECK(static_cast<Index>(g.size()) == static_cast<Index>(emitted.size()));
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] >= g[i - 1]);
    for (Index lag : g) {
      CHECK(lag >= std::min<Index>(1 + k, static_cast<Index>(src.size())));
      CHECK(lag <= static_cast<Index>(src.size()));
    }
  }
}

TEST_CASE("session protocol errors surface as state errors") {
  const Model model = Model::init(tiny_config(), 31);
  StreamSession session(model, 0, CollapseMode::Exact);
  CHECK_THROWS_AS(session.trace(), StateError);
  CHECK_THROWS_AS(session.finalize(), StateError);  // nothing read yet
  session.push(3);
  session.finalize();
  CHECK_THROWS_AS(session.push(4), StateError);
  CHECK_THROWS_AS(session.finalize(), StateError);
  CHECK_NOTHROW(session.trace());
}

TEST_CASE("streamed output equals the offline decode across modes and waits") {
  Rng rng(41);
  for (CollapseMode mode : {CollapseMode::Exact, CollapseMode::PaperLiteral}) {
    for (Index k : {Index{0}, Index{1}, Index{3}}) {
      const Model model = Model::init(tiny_config(k), 100 + k);
      for (int it = 0; it < 5; ++it) {
        const Index len = rng.uniform_int(1, 7);
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
        CHECK(emitted == offline_reference_decode(model, src, mode));
      }
    }
  }
}
