#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "red/model.hpp"

namespace red {

/// Binary checkpoint layout (all integers and floats little-endian):
///
///   char[8]  magic "REDCKPT\0"
///   u32      format version (kCheckpointVersion)
///   u32      config length, then that many bytes of ModelConfig JSON
///   u64      probe hash: FNV-1a over the bytes of log_prob on a fixed probe batch
///   u64      scaler hash: FNV-1a of the companion scaler file (0 if none)
///   u32      record count
///   records: u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload
///   u64      FNV-1a of every preceding byte
///
/// Truncated or structurally invalid files raise CorruptFileError, an
/// unknown version raises VersionError, and checksum or probe-hash
/// disagreement raises IntegrityError.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view text);

// Hash of log_prob over a fixed, seed-derived probe batch of 8 rows.
std::uint64_t probe_hash(const RedModel& m);

std::vector<std::uint8_t> serialize_checkpoint(const RedModel& m, std::uint64_t scaler_hash = 0);

struct LoadedCheckpoint {
  RedModel model;
  std::uint64_t probe_hash = 0;
  std::uint64_t scaler_hash = 0;
};

LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const RedModel& m, const std::filesystem::path& path,
                     std::uint64_t scaler_hash = 0);
LoadedCheckpoint load_checkpoint_file(const std::filesystem::path& path);
RedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace red
