#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ligr/tensor.hpp"

namespace ligr {

enum class ItemType { Video = 0, Photo = 1, Text = 2, Share = 3 };

const char* item_type_name(ItemType type);
ItemType item_type_from_name(const std::string& name);

// Fixed action vocabulary. "contribution" is derived (OR of like,
// comment, share, vote), never stored.
struct ActionVocabulary {
  static constexpr int kCount = 6;
  static constexpr std::array<const char*, kCount> kNames = {
      "click", "long_dwell", "like", "comment", "share", "vote"};
  static constexpr int kClick = 0;
  static constexpr int kLongDwell = 1;
  static constexpr std::array<int, 4> kContributionActions = {2, 3, 4, 5};

  static bool contribution(const std::vector<uint8_t>& actions);
  static int index_of(const std::string& name);  // -1 if unknown
};

// Prediction tasks = the six actions plus the derived contribution task.
inline constexpr int kNumTasks = ActionVocabulary::kCount + 1;
inline constexpr int kContributionTask = ActionVocabulary::kCount;
const char* task_name(int task);

struct InteractionEvent {
  uint64_t member_id = 0;
  uint64_t item_id = 0;
  uint64_t actor_id = 0;
  ItemType item_type = ItemType::Text;
  int item_age_bucket = 0;
  std::vector<double> content_embedding;
  std::optional<uint64_t> shared_activity_id;
  std::vector<uint8_t> actions;  // multi-hot, length ActionVocabulary::kCount
  int64_t session_id = 0;
  int64_t timestamp_ms = 0;

  bool any_action() const;
};

// member id -> chronological events
using EventLog = std::map<uint64_t, std::vector<InteractionEvent>>;

// Assigns session ids for one member's chronologically sorted events:
// id starts at 0 and increments whenever the inter-event gap exceeds
// the threshold. Throws on unsorted input.
void segment_sessions(std::vector<InteractionEvent>& events, int64_t gap_threshold_ms);

enum class TokenKind { Item, Action };

struct Token {
  TokenKind kind = TokenKind::Item;
  int64_t event_index = 0;  // index into the source event vector
  int64_t session_id = 0;
  int64_t position = 0;
};

// Interleaved item/action token stream: X0,y0,X1,y1,... Loss attaches
// only at Item tokens (predicting that item's actions); Action tokens
// carry loss_mask = false.
struct TokenSequence {
  std::vector<Token> tokens;
  Tensor labels;                   // num_items x kCount multi-hot
  std::vector<uint8_t> loss_mask;  // per token

  int64_t length() const { return static_cast<int64_t>(tokens.size()); }
  int64_t num_items() const { return length() / 2; }
};

// Keeps the most recent max_items events when truncating.
TokenSequence build_interleaved_sequence(const std::vector<InteractionEvent>& events,
                                         int64_t max_items);

struct SynthConfig {
  int64_t members = 200;
  int64_t items_per_member = 64;
  int64_t num_actors = 20;
  int64_t num_sessions = 8;
  int64_t embedding_dim = 16;
  double rho = 0.5;  // sequential-dependence strength in [0,1]

  // planted-structure tuning
  int64_t history_window = 10;      // k positively-engaged items for the running mean
  int64_t preferred_actors = 3;     // per-member preferred actor set size
  double actor_affinity = 2.0;      // logit boost on preferred actors
  double actor_popularity = 0.8;    // global per-actor logit spread
  double saturation = 0.0;          // per-repeat in-session same-actor logit decay
  double sequence_strength = 2.5;   // logit scale on the rho * cosine term
  int64_t num_topics = 10;
  int64_t session_gap_minutes = 120;

  void validate() const;  // throws on invalid values
};

SynthConfig load_synth_config(const std::string& path);
void save_synth_config(const SynthConfig& config, const std::string& path);

// Deterministic function of (config, seed). Planted structure:
// preferred-actor affinity, sequential content dependence of strength
// rho, and optional in-session same-actor saturation.
EventLog generate_synthetic_log(const SynthConfig& config, uint64_t seed);

// Line-delimited JSON, one event per line, UTF-8.
EventLog read_log(const std::string& path);
void write_log(const EventLog& log, const std::string& path);

}  // namespace ligr
