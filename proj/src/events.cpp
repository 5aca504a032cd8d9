#include "ligr/events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ligr/rng.hpp"

namespace ligr {

using nlohmann::json;

const char* item_type_name(ItemType type) {
  switch (type) {
    case ItemType::Video: return "video";
    case ItemType::Photo: return "photo";
    case ItemType::Text: return "text";
    case ItemType::Share: return "share";
  }
  return "text";
}

ItemType item_type_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    if (name == item_type_name(static_cast<ItemType>(i))) return static_cast<ItemType>(i);
  }
  throw std::invalid_argument("unknown item type: " + name);
}

bool ActionVocabulary::contribution(const std::vector<uint8_t>& actions) {
  for (int a : kContributionActions) {
    if (actions[a]) return true;
  }
  return false;
}

int ActionVocabulary::index_of(const std::string& name) {
  for (int i = 0; i < kCount; ++i) {
    if (name == kNames[i]) return i;
  }
  return -1;
}

const char* task_name(int task) {
  if (task == kContributionTask) return "contribution";
  return ActionVocabulary::kNames[task];
}

bool InteractionEvent::any_action() const {
  return std::any_of(actions.begin(), actions.end(), [](uint8_t a) { return a != 0; });
}

void segment_sessions(std::vector<InteractionEvent>& events, int64_t gap_threshold_ms) {
  int64_t session = 0;
  for (size_t i = 0; i < events.size(); ++i) {
    if (i > 0) {
      int64_t gap = events[i].timestamp_ms - events[i - 1].timestamp_ms;
      if (gap < 0)
        throw std::invalid_argument("segment_sessions: events not sorted by timestamp at index " +
                                    std::to_string(i));
      if (gap > gap_threshold_ms) ++session;
    }
    events[i].session_id = session;
  }
}

TokenSequence build_interleaved_sequence(const std::vector<InteractionEvent>& events,
                                         int64_t max_items) {
  TokenSequence seq;
  int64_t n = static_cast<int64_t>(events.size());
  int64_t keep = std::min(n, max_items);
  int64_t first = n - keep;  // recency: keep the suffix
  seq.tokens.reserve(2 * keep);
  seq.loss_mask.reserve(2 * keep);
  seq.labels = Tensor::zeros({keep, static_cast<int64_t>(ActionVocabulary::kCount)});
  for (int64_t i = 0; i < keep; ++i) {
    int64_t ev = first + i;
    seq.tokens.push_back({TokenKind::Item, ev, events[ev].session_id, 2 * i});
    seq.tokens.push_back({TokenKind::Action, ev, events[ev].session_id, 2 * i + 1});
    seq.loss_mask.push_back(1);
    seq.loss_mask.push_back(0);
    for (int a = 0; a < ActionVocabulary::kCount; ++a)
      seq.labels.at(i, a) = events[ev].actions[a] ? 1.0 : 0.0;
  }
  return seq;
}

void SynthConfig::validate() const {
  auto positive = [](int64_t v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("synth config: ") + name + " must be > 0");
  };
  positive(members, "members");
  positive(items_per_member, "items_per_member");
  positive(num_actors, "num_actors");
  positive(num_sessions, "num_sessions");
  positive(embedding_dim, "embedding_dim");
  positive(num_topics, "num_topics");
  positive(history_window, "history_window");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("synth config: rho must be in [0,1]");
  if (preferred_actors <= 0 || preferred_actors > num_actors)
    throw std::invalid_argument("synth config: preferred_actors must be in [1, num_actors]");
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// per-action intercepts: click, long_dwell, like, comment, share, vote
constexpr std::array<double, ActionVocabulary::kCount> kIntercepts = {-1.2, -1.6, -1.8,
                                                                      -2.6, -3.0, -3.2};

}  // namespace

EventLog generate_synthetic_log(const SynthConfig& config, uint64_t seed) {
  config.validate();
  EventLog log;

  // global structure shared by all members
  Rng global(hash64(seed, 0x10b5));
  std::vector<std::vector<double>> topic_means(config.num_topics,
                                               std::vector<double>(config.embedding_dim));
  for (auto& mean : topic_means)
    for (double& v : mean) v = global.normal(0.0, 1.0);
  std::vector<double> actor_pop(config.num_actors);
  for (double& v : actor_pop) v = config.actor_popularity * (2.0 * global.uniform() - 1.0);

  const int64_t items_per_session =
      (config.items_per_member + config.num_sessions - 1) / config.num_sessions;
  const int64_t base_ts = 1700000000000LL;
  const int64_t within_gap_ms = 60 * 1000;
  const int64_t session_gap_ms = config.session_gap_minutes * 60 * 1000;

  for (int64_t m = 0; m < config.members; ++m) {
    uint64_t member_id = static_cast<uint64_t>(m + 1);
    Rng rng(hash64(member_id, hash64(seed, 0xace)));

    std::vector<uint64_t> preferred(config.preferred_actors);
    for (auto& p : preferred) p = static_cast<uint64_t>(rng.uniform_int(config.num_actors));

    std::vector<InteractionEvent> events;
    std::vector<std::vector<double>> engaged;  // embeddings of positively engaged items
    int64_t ts = base_ts + m;  // stagger members so timestamps are unique per member

    for (int64_t i = 0; i < config.items_per_member; ++i) {
      int64_t session = std::min(i / items_per_session, config.num_sessions - 1);
      if (i > 0) {
        int64_t prev_session = std::min((i - 1) / items_per_session, config.num_sessions - 1);
        ts += session == prev_session ? within_gap_ms : session_gap_ms + within_gap_ms;
      }

      InteractionEvent ev;
      ev.member_id = member_id;
      ev.item_id = hash64(static_cast<uint64_t>(m) * 1000003ULL + static_cast<uint64_t>(i), seed);
      ev.actor_id = static_cast<uint64_t>(rng.uniform_int(config.num_actors));
      ev.item_type = static_cast<ItemType>(rng.uniform_int(4));
      ev.item_age_bucket = static_cast<int>(rng.uniform_int(16));
      if (rng.bernoulli(0.2))
        ev.shared_activity_id = static_cast<uint64_t>(rng.uniform_int(1000));
      ev.session_id = session;
      ev.timestamp_ms = ts;

      int64_t topic = rng.uniform_int(config.num_topics);
      ev.content_embedding.resize(config.embedding_dim);
      for (int64_t d = 0; d < config.embedding_dim; ++d)
        ev.content_embedding[d] = topic_means[topic][d] + 0.3 * rng.normal();

      double planted = actor_pop[ev.actor_id];
      if (std::find(preferred.begin(), preferred.end(), ev.actor_id) != preferred.end())
        planted += config.actor_affinity;
      if (config.rho > 0.0 && !engaged.empty()) {
        std::vector<double> mean(config.embedding_dim, 0.0);
        size_t lo = engaged.size() > static_cast<size_t>(config.history_window)
                        ? engaged.size() - config.history_window
                        : 0;
        for (size_t e = lo; e < engaged.size(); ++e)
          for (int64_t d = 0; d < config.embedding_dim; ++d) mean[d] += engaged[e][d];
        planted += config.sequence_strength * config.rho * cosine(ev.content_embedding, mean);
      }
      if (config.saturation > 0.0) {
        int64_t repeats = 0;
        for (auto it = events.rbegin(); it != events.rend() && it->session_id == session; ++it)
          if (it->actor_id == ev.actor_id) ++repeats;
        planted -= config.saturation * static_cast<double>(repeats);
      }

      ev.actions.assign(ActionVocabulary::kCount, 0);
      for (int a = 0; a < ActionVocabulary::kCount; ++a)
        ev.actions[a] = rng.bernoulli(sigmoid(kIntercepts[a] + planted)) ? 1 : 0;

      if (ev.any_action()) engaged.push_back(ev.content_embedding);
      events.push_back(std::move(ev));
    }
    log.emplace(member_id, std::move(events));
  }
  return log;
}

// ---------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------

namespace {

json event_to_json(const InteractionEvent& ev) {
  json j;
  j["member_id"] = ev.member_id;
  j["item_id"] = ev.item_id;
  j["actor_id"] = ev.actor_id;
  j["item_type"] = item_type_name(ev.item_type);
  j["item_age_bucket"] = ev.item_age_bucket;
  j["content_embedding"] = ev.content_embedding;
  if (ev.shared_activity_id) j["shared_activity_id"] = *ev.shared_activity_id;
  json actions = json::array();
  for (int a = 0; a < ActionVocabulary::kCount; ++a)
    if (ev.actions[a]) actions.push_back(a);
  j["actions"] = actions;
  j["session_id"] = ev.session_id;
  j["timestamp_ms"] = ev.timestamp_ms;
  return j;
}

InteractionEvent event_from_json(const json& j) {
  InteractionEvent ev;
  ev.member_id = j.at("member_id").get<uint64_t>();
  ev.item_id = j.at("item_id").get<uint64_t>();
  ev.actor_id = j.at("actor_id").get<uint64_t>();
  ev.item_type = item_type_from_name(j.at("item_type").get<std::string>());
  ev.item_age_bucket = j.at("item_age_bucket").get<int>();
  ev.content_embedding = j.at("content_embedding").get<std::vector<double>>();
  if (j.contains("shared_activity_id"))
    ev.shared_activity_id = j.at("shared_activity_id").get<uint64_t>();
  ev.actions.assign(ActionVocabulary::kCount, 0);
  for (const auto& a : j.at("actions")) {
    int64_t ix = a.get<int64_t>();
    if (ix < 0 || ix >= ActionVocabulary::kCount)
      throw std::invalid_argument("action index " + std::to_string(ix) + " out of range");
    ev.actions[ix] = 1;
  }
  ev.session_id = j.at("session_id").get<int64_t>();
  ev.timestamp_ms = j.at("timestamp_ms").get<int64_t>();
  return ev;
}

}  // namespace

EventLog read_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_log: cannot open " + path);
  EventLog log;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      InteractionEvent ev = event_from_json(json::parse(line));
      log[ev.member_id].push_back(std::move(ev));
    } catch (const std::exception& e) {
      throw std::runtime_error("read_log: " + path + " line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return log;
}

void write_log(const EventLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_log: cannot open " + path);
  for (const auto& [member, events] : log) {
    for (const InteractionEvent& ev : events) os << event_to_json(ev).dump() << "\n";
  }
  if (!os) throw std::runtime_error("write_log: write failed for " + path);
}

SynthConfig load_synth_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_synth_config: cannot open " + path);
  json j = json::parse(is);
  SynthConfig c;
  c.members = j.value("members", c.members);
  c.items_per_member = j.value("items_per_member", c.items_per_member);
  c.num_actors = j.value("num_actors", c.num_actors);
  c.num_sessions = j.value("num_sessions", c.num_sessions);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.rho = j.value("rho", c.rho);
  c.history_window = j.value("history_window", c.history_window);
  c.preferred_actors = j.value("preferred_actors", c.preferred_actors);
  c.actor_affinity = j.value("actor_affinity", c.actor_affinity);
  c.actor_popularity = j.value("actor_popularity", c.actor_popularity);
  c.saturation = j.value("saturation", c.saturation);
  c.sequence_strength = j.value("sequence_strength", c.sequence_strength);
  c.num_topics = j.value("num_topics", c.num_topics);
  c.session_gap_minutes = j.value("session_gap_minutes", c.session_gap_minutes);
  c.validate();
  return c;
}

void save_synth_config(const SynthConfig& config, const std::string& path) {
  json j;
  j["members"] = config.members;
  j["items_per_member"] = config.items_per_member;
  j["num_actors"] = config.num_actors;
  j["num_sessions"] = config.num_sessions;
  j["embedding_dim"] = config.embedding_dim;
  j["rho"] = config.rho;
  j["history_window"] = config.history_window;
  j["preferred_actors"] = config.preferred_actors;
  j["actor_affinity"] = config.actor_affinity;
  j["actor_popularity"] = config.actor_popularity;
  j["saturation"] = config.saturation;
  j["sequence_strength"] = config.sequence_strength;
  j["num_topics"] = config.num_topics;
  j["session_gap_minutes"] = config.session_gap_minutes;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_synth_config: cannot open " + path);
  os << j.dump(2) << "\n";
}

}  // namespace ligr
