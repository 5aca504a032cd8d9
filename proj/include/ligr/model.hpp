#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ligr/embeddings.hpp"
#include "ligr/events.hpp"
#include "ligr/graph.hpp"
#include "ligr/param_store.hpp"
#include "ligr/semantic_id.hpp"

namespace ligr {

inline constexpr std::array<const char*, 6> kFeatureNames = {
    "item_id", "actor_id", "item_type", "age_bucket", "shared_activity", "content_embedding"};

using SidMap = std::unordered_map<uint64_t, SemanticId>;

struct LigrConfig {
  int64_t num_layers = 2;
  int64_t model_dim = 32;
  int64_t num_heads = 2;
  int64_t ffn_dim = 64;
  int64_t max_interleaved_len = 2048;

  // per-feature embedding dims and vocabularies
  int64_t id_embedding_dim = 16;
  int64_t id_vocab = 100000;  // collision modulus for hashed id features
  int64_t type_vocab = 4;
  int64_t age_vocab = 16;
  int64_t content_dim = 16;
  int64_t action_embedding_dim = 0;  // 0 means model_dim; must equal model_dim otherwise

  // empty = all six features enabled
  std::vector<std::string> features;

  bool enable_setwise_blocks = false;
  // number of trailing set-wise layers when enabled; the leading
  // layers stay historical so split serving can cut the stack in two
  int64_t setwise_block_every = 2;
  bool use_position_embeddings = true;

  bool use_semantic_ids = false;  // item id slot carries the SID prefix encoding instead
  SidEncoderConfig sid;

  uint64_t hash_seed = 0x11a5;

  void validate() const;
  std::vector<std::string> enabled_features() const;
  bool feature_enabled(const std::string& name) const;
  int64_t feature_dim(const std::string& name) const;
  int64_t concat_dim() const;  // item-token feature concat width
  int64_t action_dim() const { return action_embedding_dim == 0 ? model_dim : action_embedding_dim; }
  // first set-wise layer; == num_layers when set-wise blocks are off
  int64_t setwise_layer_start() const;
  int64_t candidate_position() const { return max_interleaved_len; }
};

// ----------------------------------------------------------------------
// attention masks
// ----------------------------------------------------------------------

// mask[i][j] = (j <= i)
BoolMask build_interleaved_causal_mask(int64_t length);
// mask[i][j] = (session[j] < session[i]) or (i == j); sessions must be
// non-decreasing
BoolMask build_historical_mask(const std::vector<int64_t>& session_ids);
// mask[i][j] = (same session and both Item) or (i == j); Action tokens
// only see themselves so their representations pass through
BoolMask build_setwise_mask(const std::vector<int64_t>& session_ids,
                            const std::vector<TokenKind>& token_kinds);

// ----------------------------------------------------------------------
// model
// ----------------------------------------------------------------------

// Raw feature bundle for one item token, resolved to table rows.
struct ItemFeatures {
  int64_t item_row = 0;
  SemanticId sid;         // used instead of item_row when use_semantic_ids
  int64_t actor_row = 0;
  int64_t type_row = 0;
  int64_t age_row = 0;
  int64_t shared_row = -1;  // -1 = no shared activity
  std::vector<double> content;
};

// One member sequence prepared for the model: interleaved tokens plus
// per-item features and per-item action multi-hots.
struct SequenceBatch {
  TokenSequence seq;
  std::vector<ItemFeatures> items;                // per kept item, sequence order
  std::vector<std::vector<uint8_t>> item_actions; // per kept item multi-hot
};

class LigrModel {
 public:
  static LigrModel init(LigrConfig config, uint64_t seed);
  static LigrModel from_checkpoint(LigrConfig config, const std::string& path);

  const LigrConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int64_t dense_param_count() const { return params_.dense_param_count(); }

  ItemFeatures item_features(const InteractionEvent& event, const SidMap* sids) const;
  SequenceBatch prepare_sequence(const std::vector<InteractionEvent>& events, int64_t max_items,
                                 const SidMap* sids) const;

 private:
  explicit LigrModel(LigrConfig config) : config_(std::move(config)) { config_.validate(); }

  LigrConfig config_;
  ParamStore params_;
};

struct ForwardOutputs {
  NodeId final_logits = -1;      // after the full stack (set-wise head when enabled)
  NodeId pointwise_logits = -1;  // after the historical prefix (pointwise head)
  NodeId final_hidden = -1;      // scored-token hidden states after the full stack
  NodeId pointwise_hidden = -1;  // scored-token hidden states after the historical prefix
};

// Interleaved token embedding matrix (T x model_dim): Item tokens are
// the input projection of the 7-slot feature concat, Action tokens the
// sum of action embeddings; both carry the learned position embedding.
NodeId ligr_tokenize(Graph& g, const LigrModel& model, const SequenceBatch& batch);

// Training-regime forward over an interleaved sequence: historical
// layers under the causal mask, trailing set-wise layers (if enabled)
// under the in-session mask; readout at Item-token positions.
ForwardOutputs ligr_forward(Graph& g, const LigrModel& model, const SequenceBatch& batch);

// Candidate-scoring forward: history tokens under the historical mask
// with all candidates appended as Item tokens of a fresh session.
// Candidates attend history but never each other in historical layers;
// in set-wise layers they attend each other only when
// `candidates_setwise` is true (full-stack slate scoring). Readout at
// candidate positions.
ForwardOutputs ligr_score_candidates(Graph& g, const LigrModel& model,
                                     const SequenceBatch& history,
                                     const std::vector<ItemFeatures>& candidates,
                                     bool candidates_setwise);

// Set-wise-only rerank entry point: runs the trailing set-wise layers
// over precomputed candidate hidden states as one session and applies
// the set-wise head.
NodeId ligr_setwise_from_hidden(Graph& g, const LigrModel& model, NodeId candidate_hidden);

}  // namespace ligr
