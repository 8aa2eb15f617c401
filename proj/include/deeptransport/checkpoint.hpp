#pragma once

#include <filesystem>
#include <optional>

#include "deeptransport/optim.hpp"
#include "deeptransport/tape.hpp"
#include "json.hpp"

namespace deeptransport {

/// Single-file archive: magic "DTCKPT01", u64 manifest length, manifest
/// JSON, u64 entry count, then per entry: u32 name length, name, u32 rank,
/// u64 extents, little-endian f64 payload. Adam moments are stored as
/// entries "adam.m/<name>" and "adam.v/<name>".
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  ParamSet params;
  std::optional<AdamState> adam;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError on a truncated or malformed archive.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stable 64-bit FNV-1a of the JSON's canonical dump.
std::uint64_t config_hash(const nlohmann::json& config);

}  // namespace deeptransport
