#pragma once

#include <string>

#include "dseg/models.hpp"

namespace dseg {

// Checkpoint layout (little-endian): magic "DSEG", u32 version, u64 config
// length + UTF-8 config JSON, u32 tensor count, then per tensor u16 name
// length + name, u8 rank, u32 dims[rank], f32 payload. Parameters are stored
// as 32-bit floats, so float models round-trip bitwise.
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const ModelGraph<T>& m, const std::string& path);

// Rebuilds the architecture from the embedded config (arch + seed) and
// overwrites its parameters with the stored payloads.
template <typename T>
ModelGraph<T> load_checkpoint(const std::string& path);

}  // namespace dseg
