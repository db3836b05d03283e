#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "llie/unet.hpp"

namespace llie {

// Binary layout (all integers little-endian):
//
//   "DWUN"                      4 bytes magic
//   version                     u32 (= 1)
//   tensor count                u32
//   per tensor:
//     name length               u16
//     name                      UTF-8 bytes
//     dtype                     u8 (0 = f32, 1 = f16)
//     rank                      u8
//     dims                      rank x u32
//     data                      numel x 4 or 2 bytes, little-endian
//   metadata length             u32
//   metadata                    UTF-8 "key=value\n" lines
//
// See docs/checkpoint-format.md.
enum class StorageType : std::uint8_t { F32 = 0, F16 = 1 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

using Metadata = std::map<std::string, std::string>;

struct TensorFile {
  std::vector<NamedTensor> tensors;
  Metadata metadata;
};

std::vector<std::uint8_t> serialize_tensors(const TensorFile& file, StorageType storage);
TensorFile deserialize_tensors(const std::vector<std::uint8_t>& bytes);

// Model checkpoints store the architecture under "model.*" metadata keys in
// addition to any caller-provided metadata.
void save_checkpoint(const DwUNet& model, const std::string& path, StorageType storage = StorageType::F32,
                     const Metadata& extra = {});

struct Checkpoint {
  DwUNet model;
  Metadata metadata;
};

Checkpoint load_checkpoint(const std::string& path);

// Loads parameters into an already-built model. Names and shapes must match
// exactly; returns the stored metadata.
Metadata load_checkpoint_into(DwUNet& model, const std::string& path);

std::size_t checkpoint_size(const DwUNet& model, StorageType storage, const Metadata& extra = {});

Metadata model_metadata(const ModelConfig& config);
ModelConfig config_from_metadata(const Metadata& meta);

}  // namespace llie
