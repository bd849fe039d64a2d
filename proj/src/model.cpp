#include "nast/model.hpp"

#include <cmath>

#include "nast/rng.hpp"

namespace nast {

void ModelConfig::validate() const {
  check_arg(vocab_size >= 2, "model: vocab must hold blank plus at least one token");
  check_arg(embed_dim >= 1 && ffn_dim >= 1, "model: dims must be positive");
  check_arg(heads >= 1 && embed_dim % heads == 0, "model: embed dim must divide into heads");
  check_arg(enc_layers >= 1 && dec_layers >= 1, "model: need at least one layer per stack");
  check_arg(upsample >= 1, "model: upsample ratio must be >= 1");
  check_arg(wait_k >= 0, "model: chunk wait must be non-negative");
  check_arg(dropout >= 0.0 && dropout < 1.0, "model: dropout out of range");
  check_arg(max_positions >= upsample, "model: position table too small");
}

void ModelConfig::to_config(ConfigFile& c) const {
  c.set("model", "vocab_size", std::to_string(vocab_size));
  c.set("model", "embed_dim", std::to_string(embed_dim));
  c.set("model", "heads", std::to_string(heads));
  c.set("model", "ffn_dim", std::to_string(ffn_dim));
  c.set("model", "enc_layers", std::to_string(enc_layers));
  c.set("model", "dec_layers", std::to_string(dec_layers));
  c.set("model", "upsample", std::to_string(upsample));
  c.set("model", "wait_k", std::to_string(wait_k));
  c.set("model", "dropout", std::to_string(dropout));
  c.set("model", "max_positions", std::to_string(max_positions));
}

ModelConfig ModelConfig::from_config(const ConfigFile& c) { return from_config(c, ModelConfig{}); }

ModelConfig ModelConfig::from_config(const ConfigFile& c, ModelConfig base) {
  base.vocab_size = c.get_int("model", "vocab_size", base.vocab_size);
  base.embed_dim = c.get_int("model", "embed_dim", base.embed_dim);
  base.heads = c.get_int("model", "heads", base.heads);
  base.ffn_dim = c.get_int("model", "ffn_dim", base.ffn_dim);
  base.enc_layers = c.get_int("model", "enc_layers", base.enc_layers);
  base.dec_layers = c.get_int("model", "dec_layers", base.dec_layers);
  base.upsample = c.get_int("model", "upsample", base.upsample);
  base.wait_k = c.get_int("model", "wait_k", base.wait_k);
  base.dropout = c.get_real("model", "dropout", base.dropout);
  base.max_positions = c.get_int("model", "max_positions", base.max_positions);
  return base;
}

Index chunk_moment(Index chunk, Index wait_k, Index src_len) {
  check_arg(chunk >= 1 && chunk <= src_len, "chunk index out of range");
  check_arg(wait_k >= 0, "negative chunk wait");
  return std::min(chunk + wait_k, src_len);
}

Index position_moment(Index pos, Index upsample, Index wait_k, Index src_len) {
  check_arg(upsample >= 1, "bad upsample ratio");
  check_arg(pos >= 0 && pos < upsample * src_len, "decoder position out of range");
  return chunk_moment(pos / upsample + 1, wait_k, src_len);
}

DecodeMasks build_masks(Index src_len, Index upsample, Index wait_k) {
  check_arg(src_len >= 1, "build_masks: empty source");
  DecodeMasks masks;
  for (Index i = 0; i < src_len; ++i) masks.enc_self.push_back(i + 1);
  const Index total = src_len * upsample;
  for (Index p = 0; p < total; ++p) {
    masks.dec_self.push_back((p / upsample + 1) * upsample);
    masks.cross.push_back(position_moment(p, upsample, wait_k, src_len));
  }
  return masks;
}

std::vector<Index> upsample_ids(std::span<const Index> src, Index upsample) {
  check_arg(upsample >= 1, "bad upsample ratio");
  std::vector<Index> out;
  out.reserve(src.size() * static_cast<std::size_t>(upsample));
  for (Index id : src)
    for (Index j = 0; j < upsample; ++j) out.push_back(id);
  return out;
}

Index Parameters::add(const std::string& name, std::vector<Index> shape) {
  if (index_.count(name)) throw ContractViolation("duplicate parameter: " + name);
  const Index i = count();
  index_.emplace(name, i);
  slots_.emplace_back(name, Tensor::zeros(std::move(shape)));
  return i;
}

Tensor& Parameters::at(const std::string& name) {
  const Index i = index_of(name);
  if (i < 0) throw ContractViolation("unknown parameter: " + name);
  return slot(i);
}

const Tensor& Parameters::at(const std::string& name) const {
  const Index i = index_of(name);
  if (i < 0) throw ContractViolation("unknown parameter: " + name);
  return slot(i);
}

Index Parameters::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

Index Parameters::total_values() const {
  Index n = 0;
  for (const auto& [name, t] : slots_) n += t.numel();
  return n;
}

namespace {

void add_attention_params(Parameters& p, const std::string& prefix, Index d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) p.add(prefix + "." + w, {d, d});
  for (const char* b : {"bq", "bk", "bv", "bo"}) p.add(prefix + "." + b, {d});
}

void add_norm_params(Parameters& p, const std::string& prefix, Index d) {
  p.add(prefix + ".g", {d});
  p.add(prefix + ".b", {d});
}

void add_ffn_params(Parameters& p, const std::string& prefix, Index d, Index f) {
  p.add(prefix + ".w1", {d, f});
  p.add(prefix + ".b1", {f});
  p.add(prefix + ".w2", {f, d});
  p.add(prefix + ".b2", {d});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  const Index d = config.embed_dim;
  Parameters& p = m.params;

  p.add("embed.tok", {config.vocab_size, d});
  for (Index l = 0; l < config.enc_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    add_norm_params(p, base + ".ln1", d);
    add_attention_params(p, base + ".attn", d);
    add_norm_params(p, base + ".ln2", d);
    add_ffn_params(p, base + ".ffn", d, config.ffn_dim);
  }
  add_norm_params(p, "enc.final", d);
  for (Index l = 0; l < config.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    add_norm_params(p, base + ".ln1", d);
    add_attention_params(p, base + ".self", d);
    add_norm_params(p, base + ".ln2", d);
    add_attention_params(p, base + ".cross", d);
    add_norm_params(p, base + ".ln3", d);
    add_ffn_params(p, base + ".ffn", d, config.ffn_dim);
  }
  add_norm_params(p, "dec.final", d);
  p.add("out.w", {d, config.vocab_size});
  p.add("out.b", {config.vocab_size});

  Rng rng(seed);
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index i = 0; i < p.count(); ++i) {
    Tensor& t = p.slot(i);
    const std::string& name = p.name(i);
    if (ends_with(name, ".g")) {
      for (float& x : t.v) x = 1.0f;
    } else if (name == "embed.tok") {
      for (float& x : t.v) x = static_cast<float>(rng.normal() * embed_std);
    } else if (t.shape.size() == 2) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(t.shape[0] + t.shape[1]));
      for (float& x : t.v) x = static_cast<float>(rng.uniform(-limit, limit));
    }
    // biases and layer-norm shifts stay zero
  }
  m.pos_table = sinusoidal_positions(config.max_positions, d);
  return m;
}

Array sinusoidal_positions(Index n, Index dim) {
  check_arg(n >= 1 && dim >= 1, "bad position table shape");
  Array pe = Array::zeros({n, dim});
  for (Index pos = 0; pos < n; ++pos) {
    for (Index i = 0; i < dim; i += 2) {
      const double freq =
          std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Var LiftedModel::operator()(const std::string& name) const {
  if (!model) throw StateError("lifted model not initialized");
  const Index i = model->params.index_of(name);
  if (i < 0) throw ContractViolation("unknown parameter: " + name);
  return slots[static_cast<std::size_t>(i)];
}

LiftedModel lift_model(Tape& tape, const Model& model, bool requires_grad) {
  LiftedModel m;
  m.model = &model;
  for (Index i = 0; i < model.params.count(); ++i)
    m.slots.push_back(tape.leaf(widen(model.params.slot(i)), requires_grad));
  return m;
}

namespace {

Array slice_rows(const Array& a, Index begin, Index end) {
  Array out = Array::zeros({end - begin, a.cols()});
  for (Index r = begin; r < end; ++r)
    for (Index c = 0; c < a.cols(); ++c) out.at(r - begin, c) = a.at(r, c);
  return out;
}

Var maybe_dropout(Tape& t, Var x, double rate, Rng* rng) {
  return (rng != nullptr && rate > 0.0) ? t.dropout(x, rate, *rng) : x;
}

Var attention_sublayer(Tape& t, const LiftedModel& m, const std::string& p, Var q_in, Var kv_in,
                       std::vector<Index> limits, Index heads) {
  Var q = t.add_bias(t.matmul(q_in, m(p + ".wq")), m(p + ".bq"));
  Var k = t.add_bias(t.matmul(kv_in, m(p + ".wk")), m(p + ".bk"));
  Var v = t.add_bias(t.matmul(kv_in, m(p + ".wv")), m(p + ".bv"));
  Var a = t.attention(q, k, v, std::move(limits), heads);
  return t.add_bias(t.matmul(a, m(p + ".wo")), m(p + ".bo"));
}

Var ffn_sublayer(Tape& t, const LiftedModel& m, const std::string& p, Var x) {
  Var h = t.relu(t.add_bias(t.matmul(x, m(p + ".w1")), m(p + ".b1")));
  return t.add_bias(t.matmul(h, m(p + ".w2")), m(p + ".b2"));
}

const ModelConfig& cfg_of(const LiftedModel& m) {
  if (!m.model) throw StateError("lifted model not initialized");
  return m.model->config;
}

}  // namespace

Var encoder_forward(Tape& t, const LiftedModel& m, std::span<const Index> src, Rng* dropout_rng) {
  const ModelConfig& cfg = cfg_of(m);
  check_arg(!src.empty(), "encoder: empty source");
  const Index n = static_cast<Index>(src.size());
  if (n > cfg.max_positions) throw LengthError("source longer than position table");

  Var h = t.embedding(m("embed.tok"), std::vector<Index>(src.begin(), src.end()),
                      std::sqrt(static_cast<double>(cfg.embed_dim)));
  h = t.add(h, t.constant(slice_rows(m.model->pos_table, 0, n)));
  h = maybe_dropout(t, h, cfg.dropout, dropout_rng);

  std::vector<Index> limits;
  for (Index i = 0; i < n; ++i) limits.push_back(i + 1);

  for (Index l = 0; l < cfg.enc_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    Var norm = t.layer_norm(h, m(base + ".ln1.g"), m(base + ".ln1.b"));
    Var a = attention_sublayer(t, m, base + ".attn", norm, norm, limits, cfg.heads);
    h = t.add(h, maybe_dropout(t, a, cfg.dropout, dropout_rng));
    Var norm2 = t.layer_norm(h, m(base + ".ln2.g"), m(base + ".ln2.b"));
    Var f = ffn_sublayer(t, m, base + ".ffn", norm2);
    h = t.add(h, maybe_dropout(t, f, cfg.dropout, dropout_rng));
  }
  return t.layer_norm(h, m("enc.final.g"), m("enc.final.b"));
}

ModelOutput model_forward(Tape& t, const LiftedModel& m, std::span<const Index> src,
                          std::span<const Index> dec_ids, Rng* dropout_rng) {
  const ModelConfig& cfg = cfg_of(m);
  const Index n = static_cast<Index>(src.size());
  const Index total = n * cfg.upsample;
  check_arg(static_cast<Index>(dec_ids.size()) == total,
            "decoder inputs must cover upsample * source length");
  if (total > cfg.max_positions) throw LengthError("decoder grid longer than position table");

  ModelOutput out;
  out.enc_states = encoder_forward(t, m, src, dropout_rng);
  const DecodeMasks masks = build_masks(n, cfg.upsample, cfg.wait_k);

  Var h = t.embedding(m("embed.tok"), std::vector<Index>(dec_ids.begin(), dec_ids.end()),
                      std::sqrt(static_cast<double>(cfg.embed_dim)));
  h = t.add(h, t.constant(slice_rows(m.model->pos_table, 0, total)));
  h = maybe_dropout(t, h, cfg.dropout, dropout_rng);

  for (Index l = 0; l < cfg.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    Var norm = t.layer_norm(h, m(base + ".ln1.g"), m(base + ".ln1.b"));
    Var a = attention_sublayer(t, m, base + ".self", norm, norm, masks.dec_self, cfg.heads);
    h = t.add(h, maybe_dropout(t, a, cfg.dropout, dropout_rng));
    Var norm2 = t.layer_norm(h, m(base + ".ln2.g"), m(base + ".ln2.b"));
    Var c = attention_sublayer(t, m, base + ".cross", norm2, out.enc_states, masks.cross,
                               cfg.heads);
    h = t.add(h, maybe_dropout(t, c, cfg.dropout, dropout_rng));
    Var norm3 = t.layer_norm(h, m(base + ".ln3.g"), m(base + ".ln3.b"));
    Var f = ffn_sublayer(t, m, base + ".ffn", norm3);
    h = t.add(h, maybe_dropout(t, f, cfg.dropout, dropout_rng));
  }
  h = t.layer_norm(h, m("dec.final.g"), m("dec.final.b"));
  Var logits = t.add_bias(t.matmul(h, m("out.w")), m("out.b"));
  out.log_probs = t.log_softmax_rows(logits, true);
  return out;
}

Array decode_log_probs(const Model& model, std::span<const Index> src) {
  Tape t(false);
  const LiftedModel m = lift_model(t, model, false);
  const auto dec_ids = upsample_ids(src, model.config.upsample);
  return t.val(model_forward(t, m, src, dec_ids).log_probs);
}

namespace {

void append_rows(Array& dst, const Array& rows) {
  if (dst.numel() == 0) {
    dst = rows;
    return;
  }
  if (dst.cols() != rows.cols()) throw StateError("cache width mismatch");
  dst.v.insert(dst.v.end(), rows.v.begin(), rows.v.end());
  dst.shape[0] += rows.rows();
}

}  // namespace

IncrementalState::IncrementalState(const Model& model)
    : model_(model),
      enc_kv_(static_cast<std::size_t>(model.config.enc_layers)),
      dec_self_kv_(static_cast<std::size_t>(model.config.dec_layers)),
      dec_cross_kv_(static_cast<std::size_t>(model.config.dec_layers)) {
  model.config.validate();
}

void IncrementalState::push_source(Index token_id) {
  const ModelConfig& cfg = model_.config;
  const Index pos = source_read();
  if ((pos + 1) * cfg.upsample > cfg.max_positions)
    throw LengthError("source longer than position table allows");
  src_.push_back(token_id);

  Tape t(false);
  const LiftedModel m = lift_model(t, model_, false);
  Var h = t.embedding(m("embed.tok"), {token_id}, std::sqrt(static_cast<double>(cfg.embed_dim)));
  h = t.add(h, t.constant(slice_rows(model_.pos_table, pos, pos + 1)));

  for (Index l = 0; l < cfg.enc_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    auto& kv = enc_kv_[static_cast<std::size_t>(l)];
    Var norm = t.layer_norm(h, m(base + ".ln1.g"), m(base + ".ln1.b"));
    Var q = t.add_bias(t.matmul(norm, m(base + ".attn.wq")), m(base + ".attn.bq"));
    Var k = t.add_bias(t.matmul(norm, m(base + ".attn.wk")), m(base + ".attn.bk"));
    Var v = t.add_bias(t.matmul(norm, m(base + ".attn.wv")), m(base + ".attn.bv"));
    append_rows(kv.k, t.val(k));
    append_rows(kv.v, t.val(v));
    Var a = t.attention(q, t.constant(kv.k), t.constant(kv.v), {pos + 1}, cfg.heads);
    a = t.add_bias(t.matmul(a, m(base + ".attn.wo")), m(base + ".attn.bo"));
    h = t.add(h, a);
    Var norm2 = t.layer_norm(h, m(base + ".ln2.g"), m(base + ".ln2.b"));
    h = t.add(h, ffn_sublayer(t, m, base + ".ffn", norm2));
  }
  h = t.layer_norm(h, m("enc.final.g"), m("enc.final.b"));
  append_rows(enc_out_, t.val(h));

  for (Index l = 0; l < cfg.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l) + ".cross";
    auto& kv = dec_cross_kv_[static_cast<std::size_t>(l)];
    Var k = t.add_bias(t.matmul(h, m(base + ".wk")), m(base + ".bk"));
    Var v = t.add_bias(t.matmul(h, m(base + ".wv")), m(base + ".bv"));
    append_rows(kv.k, t.val(k));
    append_rows(kv.v, t.val(v));
  }
}

Array IncrementalState::decode_next_chunk() {
  const ModelConfig& cfg = model_.config;
  const Index chunk = chunks_done_ + 1;  // 1-based
  if (chunk > source_read())
    throw StateError("chunk " + std::to_string(chunk) + " needs unseen source");

  Tape t(false);
  const LiftedModel m = lift_model(t, model_, false);
  const std::vector<Index> ids(static_cast<std::size_t>(cfg.upsample),
                               src_[static_cast<std::size_t>(chunk - 1)]);
  const Index row0 = (chunk - 1) * cfg.upsample;
  Var h = t.embedding(m("embed.tok"), ids, std::sqrt(static_cast<double>(cfg.embed_dim)));
  h = t.add(h, t.constant(slice_rows(model_.pos_table, row0, row0 + cfg.upsample)));

  // The source read count equals this chunk's moment by the caller's
  // schedule, so attending to every cached row realizes the cross mask.
  const std::vector<Index> cross_limits(static_cast<std::size_t>(cfg.upsample), source_read());
  for (Index l = 0; l < cfg.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    auto& self_kv = dec_self_kv_[static_cast<std::size_t>(l)];
    Var norm = t.layer_norm(h, m(base + ".ln1.g"), m(base + ".ln1.b"));
    Var q = t.add_bias(t.matmul(norm, m(base + ".self.wq")), m(base + ".self.bq"));
    Var k = t.add_bias(t.matmul(norm, m(base + ".self.wk")), m(base + ".self.bk"));
    Var v = t.add_bias(t.matmul(norm, m(base + ".self.wv")), m(base + ".self.bv"));
    append_rows(self_kv.k, t.val(k));
    append_rows(self_kv.v, t.val(v));
    const std::vector<Index> self_limits(static_cast<std::size_t>(cfg.upsample),
                                         self_kv.k.rows());
    Var a = t.attention(q, t.constant(self_kv.k), t.constant(self_kv.v), self_limits, cfg.heads);
    a = t.add_bias(t.matmul(a, m(base + ".self.wo")), m(base + ".self.bo"));
    h = t.add(h, a);

    auto& cross_kv = dec_cross_kv_[static_cast<std::size_t>(l)];
    Var norm2 = t.layer_norm(h, m(base + ".ln2.g"), m(base + ".ln2.b"));
    Var qc = t.add_bias(t.matmul(norm2, m(base + ".cross.wq")), m(base + ".cross.bq"));
    Var c = t.attention(qc, t.constant(cross_kv.k), t.constant(cross_kv.v), cross_limits,
                        cfg.heads);
    c = t.add_bias(t.matmul(c, m(base + ".cross.wo")), m(base + ".cross.bo"));
    h = t.add(h, c);

    Var norm3 = t.layer_norm(h, m(base + ".ln3.g"), m(base + ".ln3.b"));
    h = t.add(h, ffn_sublayer(t, m, base + ".ffn", norm3));
  }
  h = t.layer_norm(h, m("dec.final.g"), m("dec.final.b"));
  Var logits = t.add_bias(t.matmul(h, m("out.w")), m("out.b"));
  const Array out = t.val(t.log_softmax_rows(logits, true));
  ++chunks_done_;
  return out;
}

}  // namespace nast
