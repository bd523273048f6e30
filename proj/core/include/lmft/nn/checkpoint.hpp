#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lmft/nn/tensor.hpp"

namespace lmft::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Opaque tagged blob appended after the parameter records (model config,
/// policy state). Tags are exactly four ASCII bytes.
struct CheckpointSection {
  std::string tag;
  std::string payload;
};

/// Layout: "LMCK", u32 version, u32 tensor count, then per tensor
/// (u32 name length, name bytes, u32 rank, u32 extents..., f32 values),
/// then u32 section count and per section (4-byte tag, u64 length, payload).
/// All integers and reals little-endian.
struct CheckpointFile {
  std::vector<NamedTensor> tensors;
  std::vector<CheckpointSection> sections;

  const Tensor* find_tensor(const std::string& name) const;
  const CheckpointSection* find_section(const std::string& tag) const;
};

void write_checkpoint(std::ostream& os, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

}  // namespace lmft::nn
