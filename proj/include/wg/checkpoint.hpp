#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wg/nn.hpp"

namespace wg::nn {

// Flat binary parameter container, readable from any language.
//
// Byte layout (all integers little-endian):
//   magic   : 4 bytes, "WGCP"
//   version : 1 byte, 0x01
//   count   : uint32, number of entries
//   entry   : uint32 name_len, name bytes (UTF-8, no terminator),
//             uint32 ndim, uint32 dim[ndim],
//             float64 values[prod(dim)] (little-endian IEEE-754)
// Entries are sorted by name, so identical parameters produce identical
// bytes regardless of insertion order.
struct CheckpointEntry {
    std::vector<uint32_t> shape;
    std::vector<double> values;
};

using Checkpoint = std::map<std::string, CheckpointEntry>;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const ParamRegistry& params);
// Copies values for every name present in both; throws on shape mismatch,
// naming the parameter and both shapes. Names absent from the checkpoint
// are left untouched.
void restore(ParamRegistry& params, const Checkpoint& ckpt);

} // namespace wg::nn
