#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "survpfn/model.hpp"
#include "survpfn/timewarp.hpp"

namespace survpfn {

/// First and second AdamW moments plus the number of updates applied.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Model file contents.
///
/// Layout (little-endian): "SPFN", u32 version, ModelConfig fields, u8
/// transform kind, u64 training step, u64 seed, f64 array of parameters, u8
/// optimizer flag followed by the AdamW moments, then an FNV-1a 64 checksum of
/// every preceding byte.
struct Checkpoint {
  ModelConfig config;
  std::vector<double> parameters;
  TransformKind transform = TransformKind::lognormal2normal;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::optional<AdamState> optimizer;

  [[nodiscard]] PfnModel model() const { return PfnModel(config, parameters); }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on a bad magic, unknown version, truncation or checksum mismatch.
Checkpoint deserialize_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace survpfn
