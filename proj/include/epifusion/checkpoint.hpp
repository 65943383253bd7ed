#pragma once

#include <string>
#include <vector>

#include "epifusion/model.hpp"

namespace epifusion {

// Model checkpoint: "TFZ v1\n" magic, u32 record count, then per record
// u32 name length, name bytes, u32 rank, u32 dims[rank] and the payload as
// little-endian 32-bit floats. Hyperparameters ride along as "config/..."
// records so a checkpoint is self-describing.
void write_checkpoint(const std::string& path, const Parameters& params);
Parameters read_checkpoint(const std::string& path);

struct NamedTensor {
  std::string name;
  Tensor value;
};
void write_tfz(const std::string& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_tfz(const std::string& path);

}  // namespace epifusion
