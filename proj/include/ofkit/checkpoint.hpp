#pragma once

#include <map>
#include <string>
#include <vector>

#include "ofkit/tensor.hpp"

namespace ofkit {

// Versioned binary tensor archive. Layout:
//   magic "OFKT1"
//   repeated records until EOF:
//     u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 data[numel]
// All integers and floats little-endian.
struct CheckpointRecord {
  std::string name;
  Tensor tensor;
};

void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::string& path);
std::map<std::string, Tensor> read_checkpoint_map(const std::string& path);

}  // namespace ofkit
