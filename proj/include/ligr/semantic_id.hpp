#pragma once

#include <cstdint>
#include <vector>

namespace ligr {

// Tuple of hierarchical codebook indices assigned to an item by
// residual quantization of its content embedding.
struct SemanticId {
  std::vector<int64_t> codes;  // each in [0, codebook_size)

  bool operator==(const SemanticId& other) const { return codes == other.codes; }
};

}  // namespace ligr
