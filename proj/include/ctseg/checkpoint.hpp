#pragma once

#include <string>
#include <vector>

#include "ctseg/tensor.hpp"

namespace ctseg {

// Flat container of named double tensors: a plain-text index (name, dtype,
// shape, byte offset) followed by one raw little-endian data block.
// Round trips are bit-exact.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

}  // namespace ctseg
