#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blm/params.hpp"

namespace blm {

// Checkpoint directory layout:
//   <dir>/manifest        structured text: version, role, stage, config hash,
//                         one "blob <name> <rows> <cols> <crc32>" line per blob
//   <dir>/<name>.bin      little-endian float32, row-major
//
// Values are stored as float32, so a loaded model re-saves to identical bytes.

struct CheckpointMeta {
  std::string role;   // "teacher" | "student"
  std::string stage;  // e.g. "none", "teacher", "stage1_align", ..., "stage2_e2e"
  uint64_t config_hash = 0;
};

uint32_t crc32(const void* data, size_t len);
uint64_t fnv1a64(const std::string& s);

void save_checkpoint(const std::string& dir, const CheckpointMeta& meta,
                     const std::vector<Param*>& params);

// Reads metadata only (no blobs). Throws on missing/invalid manifest.
CheckpointMeta read_checkpoint_meta(const std::string& dir);

// Loads blobs into the given params (matched by name). Throws distinct errors
// for: unreadable manifest, version mismatch, config-hash mismatch, missing
// blob file, shape mismatch, checksum mismatch, and params absent from the
// manifest. When expected_config_hash is 0 the hash check is skipped.
CheckpointMeta load_checkpoint(const std::string& dir,
                               const std::vector<Param*>& params,
                               uint64_t expected_config_hash);

// Loads only the params whose names appear in the manifest; skips the rest
// and the config-hash check. Returns how many were loaded. Used for stage
// migration (e.g. carrying a Stage-1 backbone into a Stage-2 model).
size_t load_checkpoint_partial(const std::string& dir, const std::vector<Param*>& params);

}  // namespace blm
