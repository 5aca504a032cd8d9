#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ligr/rng.hpp"
#include "ligr/semantic_id.hpp"
#include "ligr/tensor.hpp"

namespace ligr {

// Collision-based embedding bag: raw ids are hashed into a fixed-size
// table, accepting collisions.
struct HashedEmbeddingTable {
  int64_t vocab_size = 0;
  int64_t dim = 0;
  uint64_t hash_seed = 0;
  Tensor values;  // vocab_size x dim

  HashedEmbeddingTable() = default;
  HashedEmbeddingTable(int64_t vocab, int64_t d, uint64_t seed);

  void init_uniform(Rng& rng, double range);

  int64_t index_for(uint64_t raw_id) const {
    return static_cast<int64_t>(hash64(raw_id, hash_seed) % static_cast<uint64_t>(vocab_size));
  }
  std::vector<double> lookup(uint64_t raw_id) const;
};

// Column-wise split of an embedding table into logical shards. The
// concatenated shard lookup must equal the unsharded lookup exactly.
class ShardedTable {
 public:
  struct Shard {
    int64_t col_begin = 0;
    int64_t col_end = 0;
    HashedEmbeddingTable table;  // dim == col_end - col_begin
  };

  // boundaries are interior split points, e.g. {8} splits dim 16 into
  // [0,8) and [8,16). Throws on an invalid partition.
  static ShardedTable split(const HashedEmbeddingTable& source,
                            const std::vector<int64_t>& boundaries);

  explicit ShardedTable(std::vector<Shard> shards);  // validates the partition

  int64_t logical_dim() const { return logical_dim_; }
  size_t num_shards() const { return shards_.size(); }
  std::vector<double> lookup(uint64_t raw_id) const;

 private:
  std::vector<Shard> shards_;
  int64_t logical_dim_ = 0;
};

// Prefix n-gram encoding of 3-level semantic ids: a dense unigram
// table over c1, a dense bigram table over (c1,c2), and a hashed
// trigram bag over (c1,c2,c3).
struct SidEncoderConfig {
  int64_t codebook_size = 1000;
  int64_t sub_dim = 32;
  int64_t trigram_bag_size = 1000000;
  uint64_t hash_seed = 0x51d;
};

class SidPrefixEncoder {
 public:
  explicit SidPrefixEncoder(const SidEncoderConfig& config, Rng& rng);

  const SidEncoderConfig& config() const { return config_; }
  int64_t output_dim() const { return 3 * config_.sub_dim; }

  // row indices into the three tables; shared with the model's
  // parameter-table gathers
  int64_t unigram_index(const SemanticId& sid) const;
  int64_t bigram_index(const SemanticId& sid) const;
  int64_t trigram_index(const SemanticId& sid) const;

  // concat of the three sub-embeddings, dim 3 * sub_dim
  std::vector<double> encode(const SemanticId& sid) const;

  const Tensor& unigram_values() const { return unigram_.values; }
  const Tensor& bigram_values() const { return bigram_.values; }
  const Tensor& trigram_values() const { return trigram_.values; }

 private:
  void check_levels(const SemanticId& sid) const;

  SidEncoderConfig config_;
  HashedEmbeddingTable unigram_;
  HashedEmbeddingTable bigram_;
  HashedEmbeddingTable trigram_;
};

}  // namespace ligr
