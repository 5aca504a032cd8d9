#pragma once

#include <map>
#include <string>

#include "ligr/tensor.hpp"

namespace ligr {

// Self-describing binary container of named tensors. Values are stored
// as row-major little-endian float32 regardless of compute precision.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace ligr
