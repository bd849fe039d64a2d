#pragma once

#include <string>

#include "nast/data.hpp"
#include "nast/model.hpp"

namespace nast {

// File layout: magic, format version, embedded config text (model geometry,
// vocabulary, provenance), then a named-tensor table of float32 values in
// little-endian order. Loading reproduces parameters bitwise.
inline constexpr char kCheckpointMagic[8] = {'N', 'A', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFormatError : IoError {
  using IoError::IoError;
};
struct CheckpointVersionError : IoError {
  using IoError::IoError;
};
struct CheckpointTruncatedError : IoError {
  using IoError::IoError;
};
struct CheckpointUnknownTensorError : IoError {
  using IoError::IoError;
};

// extra carries non-model sections to embed (vocab, training provenance);
// the [model] section is always rewritten from the model's own config.
void save_checkpoint(const std::string& path, const Model& model, const ConfigFile& extra);

struct LoadedCheckpoint {
  Model model;
  Vocab vocab;
  ConfigFile config;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace nast
