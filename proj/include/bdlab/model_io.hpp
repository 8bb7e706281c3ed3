#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bdlab/model.hpp"

namespace bdlab {

inline constexpr std::uint16_t kModelFormatVersion = 1;

// Container layout (all integers little-endian):
//   "BDLM" | u16 version | u32 n + n bytes of key=value text |
//   u32 tensor count | per tensor: u16 name length, name, u8 rank,
//   u32 extent per axis, float32 values.
struct TensorFile {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_tensor_file(const std::string& path, const TensorFile& file);
// Throws FormatError with the byte offset of the first problem.
TensorFile read_tensor_file(const std::string& path);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace bdlab
