#include "nast/checkpoint.hpp"

#include <cstring>

namespace nast {

namespace {

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  void set_context(std::string what) { context_ = std::move(what); }

  void raw(void* dst, std::size_t n) {
    if (off_ + n > data_.size())
      throw CheckpointTruncatedError("checkpoint truncated while reading " + context_ + ": " +
                                     path_);
    std::memcpy(dst, data_.data() + off_, n);
    off_ += n;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    std::uint32_t x = 0;
    for (int i = 3; i >= 0; --i) x = (x << 8) | b[i];
    return x;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    raw(b, 8);
    std::uint64_t x = 0;
    for (int i = 7; i >= 0; --i) x = (x << 8) | b[i];
    return x;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float x;
    std::memcpy(&x, &bits, 4);
    return x;
  }

  std::string str(std::size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  bool exhausted() const { return off_ == data_.size(); }

 private:
  std::string data_;
  std::string path_;
  std::string context_ = "header";
  std::size_t off_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const ConfigFile& extra) {
  ConfigFile config = extra;
  model.config.to_config(config);
  const std::string config_text = config.serialize();

  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u64(out, config_text.size());
  out += config_text;
  put_u32(out, static_cast<std::uint32_t>(model.params.count()));
  for (Index i = 0; i < model.params.count(); ++i) {
    const std::string& name = model.params.name(i);
    const Tensor& t = model.params.slot(i);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (Index dim : t.shape) put_u64(out, static_cast<std::uint64_t>(dim));
    for (float x : t.v) put_f32(out, x);
  }
  write_text_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  Reader r(read_text_file(path), path);

  char magic[sizeof(kCheckpointMagic)];
  r.set_context("magic");
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointFormatError("not a checkpoint file: " + path);

  r.set_context("version");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) +
                                 " (expected " + std::to_string(kCheckpointVersion) +
                                 "): " + path);

  r.set_context("config");
  const std::uint64_t config_len = r.u64();
  const std::string config_text = r.str(config_len);

  LoadedCheckpoint loaded;
  loaded.config = ConfigFile::parse(config_text);
  loaded.vocab = vocab_from_config(loaded.config);
  const ModelConfig mc = ModelConfig::from_config(loaded.config);
  loaded.model = Model::init(mc, 0);

  r.set_context("tensor table");
  const std::uint32_t count = r.u32();
  std::vector<bool> filled(static_cast<std::size_t>(loaded.model.params.count()), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("tensor name " + std::to_string(i));
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    r.set_context("tensor '" + name + "'");
    const std::uint32_t rank = r.u32();
    std::vector<Index> shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(r.u64()));

    const Index idx = loaded.model.params.index_of(name);
    if (idx < 0)
      throw CheckpointUnknownTensorError("checkpoint tensor '" + name +
                                         "' does not exist in this model: " + path);
    Tensor& slot = loaded.model.params.slot(idx);
    if (shape != slot.shape)
      throw CheckpointFormatError("checkpoint tensor '" + name + "' has wrong shape: " + path);
    for (float& x : slot.v) x = r.f32();
    filled[static_cast<std::size_t>(idx)] = true;
  }
  for (Index i = 0; i < loaded.model.params.count(); ++i) {
    if (!filled[static_cast<std::size_t>(i)])
      throw CheckpointFormatError("checkpoint missing tensor '" + loaded.model.params.name(i) +
                                  "': " + path);
  }
  if (!r.exhausted()) throw CheckpointFormatError("trailing bytes after tensor table: " + path);
  return loaded;
}

}  // namespace nast
