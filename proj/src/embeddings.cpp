#include "ligr/embeddings.hpp"

#include <cmath>
#include <stdexcept>

namespace ligr {

HashedEmbeddingTable::HashedEmbeddingTable(int64_t vocab, int64_t d, uint64_t seed)
    : vocab_size(vocab), dim(d), hash_seed(seed), values(Tensor::zeros({vocab, d})) {
  if (vocab <= 0 || d <= 0)
    throw std::invalid_argument("embedding table: vocab and dim must be positive");
}

void HashedEmbeddingTable::init_uniform(Rng& rng, double range) {
  for (double& v : values.data) v = rng.uniform(-range, range);
}

std::vector<double> HashedEmbeddingTable::lookup(uint64_t raw_id) const {
  int64_t row = index_for(raw_id);
  return std::vector<double>(values.data.begin() + row * dim,
                             values.data.begin() + (row + 1) * dim);
}

ShardedTable::ShardedTable(std::vector<Shard> shards) : shards_(std::move(shards)) {
  if (shards_.empty()) throw std::invalid_argument("sharded table: no shards");
  int64_t expected = 0;
  for (const Shard& s : shards_) {
    if (s.col_begin != expected || s.col_end <= s.col_begin)
      throw std::invalid_argument("sharded table: column ranges must partition [0, dim) without gaps");
    if (s.table.dim != s.col_end - s.col_begin)
      throw std::invalid_argument("sharded table: shard table dim does not match its column range");
    if (s.table.vocab_size != shards_[0].table.vocab_size ||
        s.table.hash_seed != shards_[0].table.hash_seed)
      throw std::invalid_argument("sharded table: shards must share vocab size and hash seed");
    expected = s.col_end;
  }
  logical_dim_ = expected;
}

ShardedTable ShardedTable::split(const HashedEmbeddingTable& source,
                                 const std::vector<int64_t>& boundaries) {
  std::vector<int64_t> edges;
  edges.push_back(0);
  for (int64_t b : boundaries) edges.push_back(b);
  edges.push_back(source.dim);
  std::vector<Shard> shards;
  for (size_t i = 0; i + 1 < edges.size(); ++i) {
    int64_t lo = edges[i], hi = edges[i + 1];
    if (lo >= hi || hi > source.dim)
      throw std::invalid_argument("sharded table: bad split boundary");
    Shard shard;
    shard.col_begin = lo;
    shard.col_end = hi;
    shard.table = HashedEmbeddingTable(source.vocab_size, hi - lo, source.hash_seed);
    for (int64_t r = 0; r < source.vocab_size; ++r)
      for (int64_t c = lo; c < hi; ++c)
        shard.table.values.at(r, c - lo) = source.values.at(r, c);
    shards.push_back(std::move(shard));
  }
  return ShardedTable(std::move(shards));
}

std::vector<double> ShardedTable::lookup(uint64_t raw_id) const {
  std::vector<double> out(logical_dim_);
  for (const Shard& s : shards_) {
    std::vector<double> part = s.table.lookup(raw_id);
    std::copy(part.begin(), part.end(), out.begin() + s.col_begin);
  }
  return out;
}

SidPrefixEncoder::SidPrefixEncoder(const SidEncoderConfig& config, Rng& rng)
    : config_(config),
      unigram_(config.codebook_size, config.sub_dim, config.hash_seed),
      bigram_(config.codebook_size * config.codebook_size, config.sub_dim, config.hash_seed + 1),
      trigram_(config.trigram_bag_size, config.sub_dim, config.hash_seed + 2) {
  double range = 1.0 / std::sqrt(static_cast<double>(config.sub_dim));
  unigram_.init_uniform(rng, range);
  bigram_.init_uniform(rng, range);
  trigram_.init_uniform(rng, range);
}

void SidPrefixEncoder::check_levels(const SemanticId& sid) const {
  if (sid.codes.size() != 3)
    throw std::invalid_argument("sid prefix encoding expects exactly 3 levels, got " +
                                std::to_string(sid.codes.size()));
  for (int64_t c : sid.codes) {
    if (c < 0 || c >= config_.codebook_size)
      throw std::invalid_argument("sid code " + std::to_string(c) + " out of [0," +
                                  std::to_string(config_.codebook_size) + ")");
  }
}

int64_t SidPrefixEncoder::unigram_index(const SemanticId& sid) const {
  check_levels(sid);
  return sid.codes[0];
}

int64_t SidPrefixEncoder::bigram_index(const SemanticId& sid) const {
  check_levels(sid);
  return sid.codes[0] * config_.codebook_size + sid.codes[1];
}

int64_t SidPrefixEncoder::trigram_index(const SemanticId& sid) const {
  check_levels(sid);
  uint64_t key = static_cast<uint64_t>(
      (sid.codes[0] * config_.codebook_size + sid.codes[1]) * config_.codebook_size +
      sid.codes[2]);
  return static_cast<int64_t>(hash64(key, config_.hash_seed + 3) %
                              static_cast<uint64_t>(config_.trigram_bag_size));
}

std::vector<double> SidPrefixEncoder::encode(const SemanticId& sid) const {
  std::vector<double> out;
  out.reserve(output_dim());
  auto append = [&](const HashedEmbeddingTable& table, int64_t row) {
    out.insert(out.end(), table.values.data.begin() + row * table.dim,
               table.values.data.begin() + (row + 1) * table.dim);
  };
  append(unigram_, unigram_index(sid));
  append(bigram_, bigram_index(sid));
  append(trigram_, trigram_index(sid));
  return out;
}

}  // namespace ligr
