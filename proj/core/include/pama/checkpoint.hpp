#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pama/errors.hpp"
#include "pama/geometry.hpp"
#include "pama/model.hpp"
#include "pama/optim.hpp"

namespace pama {

/// A section's offset + length runs past the end of the parameter blob.
class SectionBoundsError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct Checkpoint {
  ModelParams model;
  GeometryConfig geometry;
  std::optional<AdamState> optimizer;
  std::uint64_t step = 0;
};

// Layout: "PAMC", u32 version (1), u32 json_len, json_len bytes of UTF-8 JSON
// header, then the little-endian f32 blob. The header holds the model and
// geometry hyperparameters and a section index (name, dtype, offset, length,
// shape) with offsets and lengths in bytes relative to the blob start.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws HyperparameterMismatch if the checkpoint's architecture (everything
/// but n_classes) differs from `expected`.
void require_compatible(const Checkpoint& ckpt, const ModelConfig& expected);

}  // namespace pama
