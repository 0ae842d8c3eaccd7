#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "shamisa/tensor.hpp"

namespace shamisa {

// Checkpoint container layout (all integers little-endian):
//   "SHCK" | version u32 | entry count u32 |
//   per entry: name length u16 | UTF-8 name | rank u8 | extents u32 x rank |
//              f64 values, row-major
// Entries are written in name order. Optimizer momentum buffers live under
// "opt.momentum/<param>", scalar state under "opt.*" and random stream
// counters under "rng.<stream>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::map<std::string, Tensor>;

void write_checkpoint(std::ostream& os, const NamedTensors& entries);
NamedTensors read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace shamisa
