#include "ligr/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ligr/rng.hpp"

namespace ligr {

// ----------------------------------------------------------------------
// config
// ----------------------------------------------------------------------

void LigrConfig::validate() const {
  if (num_layers <= 0 || model_dim <= 0 || num_heads <= 0 || ffn_dim <= 0)
    throw std::invalid_argument("ligr config: all dims must be positive");
  if (model_dim % num_heads != 0)
    throw std::invalid_argument("ligr config: model_dim must be divisible by num_heads");
  if (max_interleaved_len <= 0 || max_interleaved_len % 2 != 0)
    throw std::invalid_argument("ligr config: max_interleaved_len must be positive and even");
  if (action_embedding_dim != 0 && action_embedding_dim != model_dim)
    throw std::invalid_argument("ligr config: action embeddings must match model_dim");
  if (id_embedding_dim <= 0 || id_vocab <= 0 || type_vocab <= 0 || age_vocab <= 0 ||
      content_dim <= 0)
    throw std::invalid_argument("ligr config: feature dims must be positive");
  if (enable_setwise_blocks && (setwise_block_every <= 0 || setwise_block_every >= num_layers))
    throw std::invalid_argument(
        "ligr config: setwise_block_every must leave at least one historical layer");
  for (const std::string& f : features) {
    if (std::find(kFeatureNames.begin(), kFeatureNames.end(), f) == kFeatureNames.end())
      throw std::invalid_argument("ligr config: unknown feature " + f);
  }
}

std::vector<std::string> LigrConfig::enabled_features() const {
  if (!features.empty()) return features;
  return std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end());
}

bool LigrConfig::feature_enabled(const std::string& name) const {
  auto enabled = enabled_features();
  return std::find(enabled.begin(), enabled.end(), name) != enabled.end();
}

int64_t LigrConfig::feature_dim(const std::string& name) const {
  if (name == "item_id") return use_semantic_ids ? 3 * sid.sub_dim : id_embedding_dim;
  if (name == "content_embedding") return content_dim;
  if (name == "actor_id" || name == "item_type" || name == "age_bucket" ||
      name == "shared_activity")
    return id_embedding_dim;
  throw std::invalid_argument("ligr config: unknown feature " + name);
}

int64_t LigrConfig::concat_dim() const {
  int64_t total = 0;
  for (const std::string& f : enabled_features()) total += feature_dim(f);
  return total;
}

int64_t LigrConfig::setwise_layer_start() const {
  return enable_setwise_blocks ? num_layers - setwise_block_every : num_layers;
}

// ----------------------------------------------------------------------
// masks
// ----------------------------------------------------------------------

BoolMask build_interleaved_causal_mask(int64_t length) {
  BoolMask mask(length, length);
  for (int64_t i = 0; i < length; ++i)
    for (int64_t j = 0; j <= i; ++j) mask.set(i, j, true);
  return mask;
}

namespace {
void check_sessions_non_decreasing(const std::vector<int64_t>& session_ids, const char* who) {
  for (size_t i = 1; i < session_ids.size(); ++i) {
    if (session_ids[i] < session_ids[i - 1])
      throw std::invalid_argument(std::string(who) + ": session ids must be non-decreasing");
  }
}
}  // namespace

BoolMask build_historical_mask(const std::vector<int64_t>& session_ids) {
  check_sessions_non_decreasing(session_ids, "historical mask");
  int64_t n = static_cast<int64_t>(session_ids.size());
  BoolMask mask(n, n);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j)
      mask.set(i, j, session_ids[j] < session_ids[i] || i == j);
  }
  return mask;
}

BoolMask build_setwise_mask(const std::vector<int64_t>& session_ids,
                            const std::vector<TokenKind>& token_kinds) {
  check_sessions_non_decreasing(session_ids, "setwise mask");
  if (session_ids.size() != token_kinds.size())
    throw std::invalid_argument("setwise mask: kinds and sessions must align");
  int64_t n = static_cast<int64_t>(session_ids.size());
  BoolMask mask(n, n);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      bool both_items = token_kinds[i] == TokenKind::Item && token_kinds[j] == TokenKind::Item;
      mask.set(i, j, (both_items && session_ids[i] == session_ids[j]) || i == j);
    }
  }
  return mask;
}

// ----------------------------------------------------------------------
// parameters
// ----------------------------------------------------------------------

namespace {

Tensor uniform_init(Rng& rng, Shape shape, int64_t fan_in) {
  Tensor t = Tensor::zeros(std::move(shape));
  double range = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-range, range);
  return t;
}

std::string layer_key(int64_t layer, const char* suffix) {
  return "layers/" + std::to_string(layer) + "/" + suffix;
}

}  // namespace

LigrModel LigrModel::init(LigrConfig config, uint64_t seed) {
  LigrModel model(std::move(config));
  const LigrConfig& c = model.config_;
  ParamStore& p = model.params_;
  Rng rng(seed);

  const int64_t d = c.model_dim;
  if (c.feature_enabled("item_id")) {
    if (c.use_semantic_ids) {
      p.set("emb/sid_unigram", uniform_init(rng, {c.sid.codebook_size, c.sid.sub_dim}, c.sid.sub_dim));
      p.set("emb/sid_bigram", uniform_init(rng, {c.sid.codebook_size * c.sid.codebook_size, c.sid.sub_dim}, c.sid.sub_dim));
      p.set("emb/sid_trigram", uniform_init(rng, {c.sid.trigram_bag_size, c.sid.sub_dim}, c.sid.sub_dim));
    } else {
      p.set("emb/item_id", uniform_init(rng, {c.id_vocab, c.id_embedding_dim}, c.id_embedding_dim));
    }
  }
  if (c.feature_enabled("actor_id"))
    p.set("emb/actor_id", uniform_init(rng, {c.id_vocab, c.id_embedding_dim}, c.id_embedding_dim));
  if (c.feature_enabled("item_type"))
    p.set("emb/item_type", uniform_init(rng, {c.type_vocab, c.id_embedding_dim}, c.id_embedding_dim));
  if (c.feature_enabled("age_bucket"))
    p.set("emb/age_bucket", uniform_init(rng, {c.age_vocab, c.id_embedding_dim}, c.id_embedding_dim));
  if (c.feature_enabled("shared_activity"))
    p.set("emb/shared_activity", uniform_init(rng, {c.id_vocab, c.id_embedding_dim}, c.id_embedding_dim));

  p.set("emb/action", uniform_init(rng, {static_cast<int64_t>(ActionVocabulary::kCount), d}, d));
  if (c.use_position_embeddings)
    p.set("emb/position", uniform_init(rng, {c.max_interleaved_len + 1, d}, d));

  p.set("in_proj/W", uniform_init(rng, {c.concat_dim(), d}, c.concat_dim()));
  p.set("in_proj/b", Tensor::zeros({d}));

  for (int64_t l = 0; l < c.num_layers; ++l) {
    p.set(layer_key(l, "ln1/g"), Tensor::full({d}, 1.0));
    p.set(layer_key(l, "ln1/b"), Tensor::zeros({d}));
    p.set(layer_key(l, "attn/Wq"), uniform_init(rng, {d, d}, d));
    p.set(layer_key(l, "attn/Wk"), uniform_init(rng, {d, d}, d));
    p.set(layer_key(l, "attn/Wv"), uniform_init(rng, {d, d}, d));
    p.set(layer_key(l, "attn/Wo"), uniform_init(rng, {d, d}, d));
    p.set(layer_key(l, "attn/gate"), Tensor::zeros({d, d}));
    p.set(layer_key(l, "ln2/g"), Tensor::full({d}, 1.0));
    p.set(layer_key(l, "ln2/b"), Tensor::zeros({d}));
    p.set(layer_key(l, "ffn/W1"), uniform_init(rng, {d, c.ffn_dim}, d));
    p.set(layer_key(l, "ffn/b1"), Tensor::zeros({c.ffn_dim}));
    p.set(layer_key(l, "ffn/W2"), uniform_init(rng, {c.ffn_dim, d}, c.ffn_dim));
    p.set(layer_key(l, "ffn/b2"), Tensor::zeros({d}));
    p.set(layer_key(l, "ffn/gate"), Tensor::zeros({d, d}));
  }

  p.set("heads/point/W", uniform_init(rng, {d, static_cast<int64_t>(kNumTasks)}, d));
  p.set("heads/point/b", Tensor::zeros({static_cast<int64_t>(kNumTasks)}));
  if (c.enable_setwise_blocks) {
    p.set("heads/set/W", uniform_init(rng, {d, static_cast<int64_t>(kNumTasks)}, d));
    p.set("heads/set/b", Tensor::zeros({static_cast<int64_t>(kNumTasks)}));
  }
  return model;
}

LigrModel LigrModel::from_checkpoint(LigrConfig config, const std::string& path) {
  LigrModel model(std::move(config));
  model.params_ = ParamStore::load(path);
  return model;
}

// ----------------------------------------------------------------------
// feature preparation
// ----------------------------------------------------------------------

ItemFeatures LigrModel::item_features(const InteractionEvent& event, const SidMap* sids) const {
  ItemFeatures f;
  const LigrConfig& c = config_;
  if (c.use_semantic_ids) {
    if (sids == nullptr)
      throw std::invalid_argument("item features: semantic ids enabled but no sid map given");
    auto it = sids->find(event.item_id);
    if (it == sids->end())
      throw std::invalid_argument("item features: no semantic id for item " +
                                  std::to_string(event.item_id));
    f.sid = it->second;
  } else {
    f.item_row = static_cast<int64_t>(hash64(event.item_id, c.hash_seed) %
                                      static_cast<uint64_t>(c.id_vocab));
  }
  f.actor_row = static_cast<int64_t>(hash64(event.actor_id, c.hash_seed + 1) %
                                     static_cast<uint64_t>(c.id_vocab));
  f.type_row = static_cast<int64_t>(event.item_type) % c.type_vocab;
  f.age_row = static_cast<int64_t>(event.item_age_bucket) % c.age_vocab;
  f.shared_row = event.shared_activity_id
                     ? static_cast<int64_t>(hash64(*event.shared_activity_id, c.hash_seed + 2) %
                                            static_cast<uint64_t>(c.id_vocab))
                     : -1;
  f.content = event.content_embedding;
  return f;
}

SequenceBatch LigrModel::prepare_sequence(const std::vector<InteractionEvent>& events,
                                          int64_t max_items, const SidMap* sids) const {
  SequenceBatch batch;
  int64_t limit = std::min(max_items, config_.max_interleaved_len / 2);
  batch.seq = build_interleaved_sequence(events, limit);
  for (int64_t i = 0; i < batch.seq.num_items(); ++i) {
    const InteractionEvent& ev = events[batch.seq.tokens[2 * i].event_index];
    batch.items.push_back(item_features(ev, sids));
    batch.item_actions.push_back(ev.actions);
  }
  return batch;
}

// ----------------------------------------------------------------------
// forward
// ----------------------------------------------------------------------

namespace {

// item feature concat -> input projection, no position embedding yet
NodeId item_token_embeddings(Graph& g, ParamBinder& bind, const LigrConfig& c,
                             const std::vector<ItemFeatures>& items) {
  int64_t n = static_cast<int64_t>(items.size());
  std::vector<NodeId> parts;
  for (const std::string& feature : c.enabled_features()) {
    if (feature == "item_id") {
      if (c.use_semantic_ids) {
        std::vector<int64_t> uni(n), bi(n), tri(n);
        for (int64_t i = 0; i < n; ++i) {
          const SemanticId& sid = items[i].sid;
          if (sid.codes.size() != 3)
            throw std::invalid_argument("tokenize: item_id needs a 3-level semantic id");
          uni[i] = sid.codes[0];
          bi[i] = sid.codes[0] * c.sid.codebook_size + sid.codes[1];
          uint64_t key = static_cast<uint64_t>(
              (sid.codes[0] * c.sid.codebook_size + sid.codes[1]) * c.sid.codebook_size +
              sid.codes[2]);
          tri[i] = static_cast<int64_t>(hash64(key, c.sid.hash_seed + 3) %
                                        static_cast<uint64_t>(c.sid.trigram_bag_size));
        }
        parts.push_back(g.gather_rows(bind("emb/sid_unigram"), uni));
        parts.push_back(g.gather_rows(bind("emb/sid_bigram"), bi));
        parts.push_back(g.gather_rows(bind("emb/sid_trigram"), tri));
      } else {
        std::vector<int64_t> rows(n);
        for (int64_t i = 0; i < n; ++i) rows[i] = items[i].item_row;
        parts.push_back(g.gather_rows(bind("emb/item_id"), rows));
      }
    } else if (feature == "content_embedding") {
      Tensor content = Tensor::zeros({n, c.content_dim});
      for (int64_t i = 0; i < n; ++i) {
        if (static_cast<int64_t>(items[i].content.size()) != c.content_dim)
          throw std::invalid_argument(
              "tokenize: content_embedding dim " + std::to_string(items[i].content.size()) +
              " does not match configured " + std::to_string(c.content_dim));
        for (int64_t j = 0; j < c.content_dim; ++j) content.at(i, j) = items[i].content[j];
      }
      parts.push_back(g.constant(std::move(content)));
    } else if (feature == "shared_activity") {
      std::vector<int64_t> rows(n);
      Tensor presence = Tensor::zeros({n, c.id_embedding_dim});
      for (int64_t i = 0; i < n; ++i) {
        rows[i] = std::max<int64_t>(items[i].shared_row, 0);
        if (items[i].shared_row >= 0)
          for (int64_t j = 0; j < c.id_embedding_dim; ++j) presence.at(i, j) = 1.0;
      }
      parts.push_back(
          g.mul(g.gather_rows(bind("emb/shared_activity"), rows), g.constant(std::move(presence))));
    } else {
      std::vector<int64_t> rows(n);
      for (int64_t i = 0; i < n; ++i) {
        if (feature == "actor_id")
          rows[i] = items[i].actor_row;
        else if (feature == "item_type")
          rows[i] = items[i].type_row;
        else
          rows[i] = items[i].age_row;
      }
      parts.push_back(g.gather_rows(bind("emb/" + feature), rows));
    }
  }
  NodeId concat = parts.size() == 1 ? parts[0] : g.concat(parts, 1);
  return g.add_rows(g.matmul(concat, bind("in_proj/W")), bind("in_proj/b"));
}

// sum of action embeddings per event (zero vector when no action)
NodeId action_token_embeddings(Graph& g, ParamBinder& bind, const LigrConfig& c,
                               const std::vector<std::vector<uint8_t>>& actions) {
  int64_t n = static_cast<int64_t>(actions.size());
  Tensor multihot = Tensor::zeros({n, static_cast<int64_t>(ActionVocabulary::kCount)});
  for (int64_t i = 0; i < n; ++i)
    for (int a = 0; a < ActionVocabulary::kCount; ++a)
      multihot.at(i, a) = actions[i][a] ? 1.0 : 0.0;
  (void)c;
  return g.matmul(g.constant(std::move(multihot)), bind("emb/action"));
}

NodeId add_position_embeddings(Graph& g, ParamBinder& bind, const LigrConfig& c, NodeId tokens,
                               const std::vector<int64_t>& positions) {
  if (!c.use_position_embeddings) return tokens;
  return g.add(tokens, g.gather_rows(bind("emb/position"), positions));
}

NodeId run_gated_layer(Graph& g, ParamBinder& bind, const LigrConfig& c, int64_t layer, NodeId h,
                       const BoolMask& mask) {
  auto p = [&](const char* suffix) { return bind(layer_key(layer, suffix)); };
  const int64_t d = c.model_dim;
  const int64_t head_dim = d / c.num_heads;

  NodeId u = g.layer_norm(h, p("ln1/g"), p("ln1/b"));
  NodeId q = g.matmul(u, p("attn/Wq"));
  NodeId k = g.matmul(u, p("attn/Wk"));
  NodeId v = g.matmul(u, p("attn/Wv"));
  std::vector<NodeId> heads;
  for (int64_t hix = 0; hix < c.num_heads; ++hix) {
    int64_t lo = hix * head_dim, hi = lo + head_dim;
    NodeId qh = g.slice(q, 1, lo, hi);
    NodeId kh = g.slice(k, 1, lo, hi);
    NodeId vh = g.slice(v, 1, lo, hi);
    NodeId scores = g.scale(g.matmul(qh, g.transpose(kh)),
                            1.0 / std::sqrt(static_cast<double>(head_dim)));
    NodeId probs = g.masked_softmax(scores, mask);
    heads.push_back(g.matmul(probs, vh));
  }
  NodeId ctx = heads.size() == 1 ? heads[0] : g.concat(heads, 1);
  NodeId attn = g.matmul(ctx, p("attn/Wo"));
  NodeId gate1 = g.sigmoid(g.matmul(h, p("attn/gate")));
  h = g.add(h, g.mul(attn, gate1));

  NodeId u2 = g.layer_norm(h, p("ln2/g"), p("ln2/b"));
  NodeId hidden = g.gelu(g.add_rows(g.matmul(u2, p("ffn/W1")), p("ffn/b1")));
  NodeId ffn = g.add_rows(g.matmul(hidden, p("ffn/W2")), p("ffn/b2"));
  NodeId gate2 = g.sigmoid(g.matmul(h, p("ffn/gate")));
  return g.add(h, g.mul(ffn, gate2));
}

NodeId apply_head(Graph& g, ParamBinder& bind, const char* head, NodeId hidden) {
  std::string base = std::string("heads/") + head;
  return g.add_rows(g.matmul(hidden, bind(base + "/W")), bind(base + "/b"));
}

// historical prefix under hist_mask, optional set-wise suffix under
// set_mask, readout (both heads) at the given token rows
ForwardOutputs run_stack(Graph& g, ParamBinder& bind, const LigrConfig& c, NodeId tokens,
                         const BoolMask& hist_mask, const BoolMask* set_mask,
                         const std::vector<int64_t>& readout_rows) {
  NodeId h = tokens;
  const int64_t split = c.setwise_layer_start();
  for (int64_t l = 0; l < split; ++l) h = run_gated_layer(g, bind, c, l, h, hist_mask);

  ForwardOutputs out;
  out.pointwise_hidden = g.gather_rows(h, readout_rows);
  out.pointwise_logits = apply_head(g, bind, "point", out.pointwise_hidden);

  if (split == c.num_layers || set_mask == nullptr) {
    out.final_hidden = out.pointwise_hidden;
    out.final_logits = out.pointwise_logits;
    return out;
  }
  for (int64_t l = split; l < c.num_layers; ++l) h = run_gated_layer(g, bind, c, l, h, *set_mask);
  out.final_hidden = g.gather_rows(h, readout_rows);
  out.final_logits = apply_head(g, bind, "set", out.final_hidden);
  return out;
}

}  // namespace

NodeId ligr_tokenize(Graph& g, const LigrModel& model, const SequenceBatch& batch) {
  const LigrConfig& c = model.config();
  const TokenSequence& seq = batch.seq;
  if (seq.length() == 0) throw std::invalid_argument("tokenize: empty sequence");
  const int64_t n = seq.num_items();
  const int64_t T = seq.length();

  ParamBinder bind(g, model.params());
  NodeId items = item_token_embeddings(g, bind, c, batch.items);
  NodeId actions = action_token_embeddings(g, bind, c, batch.item_actions);
  NodeId stacked = g.concat({items, actions}, 0);
  std::vector<int64_t> interleave(T);
  for (int64_t i = 0; i < n; ++i) {
    interleave[2 * i] = i;
    interleave[2 * i + 1] = n + i;
  }
  NodeId tokens = g.gather_rows(stacked, interleave);
  std::vector<int64_t> positions(T);
  for (int64_t t = 0; t < T; ++t) positions[t] = seq.tokens[t].position;
  return add_position_embeddings(g, bind, c, tokens, positions);
}

ForwardOutputs ligr_forward(Graph& g, const LigrModel& model, const SequenceBatch& batch) {
  const LigrConfig& c = model.config();
  const TokenSequence& seq = batch.seq;
  if (seq.length() == 0) throw std::invalid_argument("ligr_forward: empty sequence");
  const int64_t n = seq.num_items();
  const int64_t T = seq.length();

  ParamBinder bind(g, model.params());
  NodeId tokens = ligr_tokenize(g, model, batch);

  std::vector<int64_t> sessions(T);
  std::vector<TokenKind> kinds(T);
  for (int64_t t = 0; t < T; ++t) {
    sessions[t] = seq.tokens[t].session_id;
    kinds[t] = seq.tokens[t].kind;
  }
  BoolMask causal = build_interleaved_causal_mask(T);
  std::vector<int64_t> item_rows(n);
  for (int64_t i = 0; i < n; ++i) item_rows[i] = 2 * i;

  if (c.setwise_layer_start() < c.num_layers) {
    BoolMask setwise = build_setwise_mask(sessions, kinds);
    return run_stack(g, bind, c, tokens, causal, &setwise, item_rows);
  }
  return run_stack(g, bind, c, tokens, causal, nullptr, item_rows);
}

ForwardOutputs ligr_score_candidates(Graph& g, const LigrModel& model,
                                     const SequenceBatch& history,
                                     const std::vector<ItemFeatures>& candidates,
                                     bool candidates_setwise) {
  const LigrConfig& c = model.config();
  if (candidates.empty()) throw std::invalid_argument("score_candidates: empty candidate list");
  const TokenSequence& seq = history.seq;
  const int64_t n = seq.num_items();
  const int64_t hist_len = seq.length();
  const int64_t n_cand = static_cast<int64_t>(candidates.size());
  const int64_t T = hist_len + n_cand;

  ParamBinder bind(g, model.params());
  NodeId cand_tokens = item_token_embeddings(g, bind, c, candidates);

  std::vector<int64_t> sessions(T);
  std::vector<TokenKind> kinds(T);
  std::vector<int64_t> positions(T);
  int64_t cand_session = 0;
  NodeId tokens;
  if (hist_len > 0) {
    NodeId items = item_token_embeddings(g, bind, c, history.items);
    NodeId actions = action_token_embeddings(g, bind, c, history.item_actions);
    NodeId stacked = g.concat({items, actions, cand_tokens}, 0);
    std::vector<int64_t> order(T);
    for (int64_t i = 0; i < n; ++i) {
      order[2 * i] = i;
      order[2 * i + 1] = n + i;
    }
    for (int64_t i = 0; i < n_cand; ++i) order[hist_len + i] = 2 * n + i;
    tokens = g.gather_rows(stacked, order);
    for (int64_t t = 0; t < hist_len; ++t) {
      sessions[t] = seq.tokens[t].session_id;
      kinds[t] = seq.tokens[t].kind;
      positions[t] = seq.tokens[t].position;
    }
    cand_session = seq.tokens[hist_len - 1].session_id + 1;
  } else {
    tokens = cand_tokens;
  }
  for (int64_t i = 0; i < n_cand; ++i) {
    sessions[hist_len + i] = cand_session;
    kinds[hist_len + i] = TokenKind::Item;
    positions[hist_len + i] = c.candidate_position();
  }
  tokens = add_position_embeddings(g, bind, c, tokens, positions);

  BoolMask hist_mask = build_historical_mask(sessions);
  std::vector<int64_t> cand_rows(n_cand);
  for (int64_t i = 0; i < n_cand; ++i) cand_rows[i] = hist_len + i;

  if (candidates_setwise && c.setwise_layer_start() < c.num_layers) {
    BoolMask setwise = build_setwise_mask(sessions, kinds);
    return run_stack(g, bind, c, tokens, hist_mask, &setwise, cand_rows);
  }
  ForwardOutputs out = run_stack(g, bind, c, tokens, hist_mask, nullptr, cand_rows);
  return out;
}

NodeId ligr_setwise_from_hidden(Graph& g, const LigrModel& model, NodeId candidate_hidden) {
  const LigrConfig& c = model.config();
  if (c.setwise_layer_start() == c.num_layers)
    throw std::invalid_argument("setwise rerank: model has no set-wise layers");
  int64_t k = g.value(candidate_hidden).shape[0];
  ParamBinder bind(g, model.params());
  BoolMask full(k, k);
  std::fill(full.allow.begin(), full.allow.end(), uint8_t{1});
  NodeId h = candidate_hidden;
  for (int64_t l = c.setwise_layer_start(); l < c.num_layers; ++l)
    h = run_gated_layer(g, bind, c, l, h, full);
  return apply_head(g, bind, "set", h);
}

}  // namespace ligr
