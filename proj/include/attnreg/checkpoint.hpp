#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "attnreg/model.hpp"

namespace attnreg::model {

// Layout, all integers and floats little-endian:
//   "ATRG" | u32 version | 7 x u64 ModelConfig (n_layers, n_heads, d_model,
//   d_ff, vocab_size, max_seq_len, seed) | u32 tensor count |
//   per tensor: u32 name length, name bytes, u32 rank, rank x u64 extents,
//   f64 values in row-major order.
inline constexpr char kCheckpointMagic[4] = {'A', 'T', 'R', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const Parameters& params);
Parameters read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Parameters& params);
Parameters load_checkpoint(const std::filesystem::path& path);

}  // namespace attnreg::model
