#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acenet/trainer.hpp"

namespace acenet {

// Layout (little-endian):
//   "ACENETCK" | u32 version | u64 payload length | u32 crc32(payload) | payload
// payload:
//   u64 + bytes  config JSON {"model": {...}, "train": {...}}
//   u64 epoch, iter, iter_total, best_epoch
//   u64 n + f64[n] loss history, u64 n + f64[n] validation history
//   three tensor sections (parameters, buffers, velocity), each
//     u64 count, then per tensor: u32 name length, name, u32 rank, u64 dims[rank], f64 data
inline constexpr char kCheckpointMagic[8] = {'A', 'C', 'E', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<char> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws LoadError on bad magic/version/length/checksum, malformed payload,
/// or tensors that do not match the embedded config.
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace acenet
