#include "ligr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ligr {

std::vector<double> LossConfig::effective_weights() const {
  if (task_weights.empty()) return std::vector<double>(kNumTasks, 1.0);
  if (task_weights.size() != static_cast<size_t>(kNumTasks))
    throw std::invalid_argument("loss config: expected " + std::to_string(kNumTasks) +
                                " task weights");
  for (double w : task_weights)
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("loss config: task weights must be finite and >= 0");
  return task_weights;
}

Tensor derive_task_labels(const Tensor& action_labels) {
  int64_t n = action_labels.shape[0];
  Tensor out = Tensor::zeros({n, static_cast<int64_t>(kNumTasks)});
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int a = 0; a < ActionVocabulary::kCount; ++a) {
      out.at(i, a) = action_labels.at(i, a);
    }
    for (int a : ActionVocabulary::kContributionActions) acc = std::max(acc, action_labels.at(i, a));
    out.at(i, kContributionTask) = acc;
  }
  return out;
}

NodeId multitask_bce_node(Graph& g, NodeId logits, const Tensor& action_labels,
                          const std::vector<uint8_t>& item_mask, const LossConfig& config) {
  const Tensor& lv = g.value(logits);
  if (lv.rank() != 2 || lv.shape[1] != kNumTasks)
    throw std::invalid_argument("multitask_bce: logits must be n x " + std::to_string(kNumTasks));
  int64_t n = lv.shape[0];
  if (action_labels.shape[0] != n || item_mask.size() != static_cast<size_t>(n))
    throw std::invalid_argument("multitask_bce: labels/mask rows must match logits");

  Tensor targets = derive_task_labels(action_labels);
  std::vector<double> weights = config.effective_weights();
  int64_t unmasked = std::count(item_mask.begin(), item_mask.end(), uint8_t{1});
  double denom = unmasked > 0 ? static_cast<double>(unmasked) : 1.0;

  Tensor weight_mask = Tensor::zeros(lv.shape);
  for (int64_t i = 0; i < n; ++i) {
    if (!item_mask[i]) continue;
    for (int t = 0; t < kNumTasks; ++t) weight_mask.at(i, t) = weights[t] / denom;
  }
  NodeId per_elem = g.bce_with_logits(logits, g.constant(std::move(targets)));
  return g.sum(g.mul(per_elem, g.constant(std::move(weight_mask))));
}

double multitask_bce(const Tensor& logits, const Tensor& action_labels,
                     const std::vector<uint8_t>& item_mask, const LossConfig& config) {
  Graph g(Precision::F64);
  NodeId node = multitask_bce_node(g, g.constant(logits), action_labels, item_mask, config);
  return g.value(node).data[0];
}

NodeId attention_rank_loss_node(Graph& g, NodeId scores, const std::vector<double>& relevance,
                                const std::vector<int64_t>& session_ids) {
  const Tensor& sv = g.value(scores);
  if (sv.rank() != 1)
    throw std::invalid_argument("attention_rank_loss: scores must be rank 1");
  int64_t n = sv.shape[0];
  if (relevance.size() != static_cast<size_t>(n) || session_ids.size() != static_cast<size_t>(n))
    throw std::invalid_argument("attention_rank_loss: relevance/session sizes must match scores");
  for (double r : relevance)
    if (r < 0.0) throw std::invalid_argument("attention_rank_loss: relevance must be >= 0");

  std::vector<NodeId> session_losses;
  int64_t lo = 0;
  while (lo < n) {
    int64_t hi = lo;
    while (hi < n && session_ids[hi] == session_ids[lo]) ++hi;
    if (hi - lo >= 2) {
      double total = std::accumulate(relevance.begin() + lo, relevance.begin() + hi, 0.0);
      Tensor b = Tensor::zeros({hi - lo});
      for (int64_t i = lo; i < hi; ++i)
        b.data[i - lo] = total > 0.0 ? relevance[i] / total : 1.0 / static_cast<double>(hi - lo);
      NodeId s = g.slice(scores, 0, lo, hi);
      // H(b, softmax(s)) = logsumexp(s) - sum(b * s)
      NodeId ce = g.sub(g.logsumexp(s), g.sum(g.mul(s, g.constant(std::move(b)))));
      session_losses.push_back(ce);
    }
    lo = hi;
  }
  if (session_losses.empty()) return g.constant(Tensor::scalar(0.0));
  NodeId acc = session_losses[0];
  for (size_t i = 1; i < session_losses.size(); ++i) acc = g.add(acc, session_losses[i]);
  return g.scale(acc, 1.0 / static_cast<double>(session_losses.size()));
}

double attention_rank_loss(const std::vector<double>& scores, const std::vector<double>& relevance,
                           const std::vector<int64_t>& session_ids) {
  Graph g(Precision::F64);
  NodeId node = attention_rank_loss_node(g, g.constant(Tensor::vec(scores)), relevance, session_ids);
  return g.value(node).data[0];
}

std::optional<double> roc_auc(const std::vector<double>& scores,
                              const std::vector<uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_auc: scores and labels must have equal length");
  size_t n = scores.size();
  int64_t positives = std::count_if(labels.begin(), labels.end(), [](uint8_t v) { return v != 0; });
  int64_t negatives = static_cast<int64_t>(n) - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midranks for tied scores, 1-based
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double mid = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }

  double rank_sum = 0.0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k]) rank_sum += rank[k];
  double u = rank_sum - 0.5 * static_cast<double>(positives) * static_cast<double>(positives + 1);
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

std::optional<double> normalized_entropy(const std::vector<double>& logits,
                                         const std::vector<uint8_t>& labels) {
  if (logits.size() != labels.size())
    throw std::invalid_argument("normalized_entropy: sizes must match");
  size_t n = logits.size();
  if (n == 0) return std::nullopt;
  int64_t positives = std::count_if(labels.begin(), labels.end(), [](uint8_t v) { return v != 0; });
  if (positives == 0 || positives == static_cast<int64_t>(n)) return std::nullopt;

  double bce = 0.0;
  for (size_t k = 0; k < n; ++k) {
    double x = logits[k];
    double y = labels[k] ? 1.0 : 0.0;
    bce += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  bce /= static_cast<double>(n);
  double p = static_cast<double>(positives) / static_cast<double>(n);
  double h = -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
  return bce / h;
}

double estimate_training_flops(int64_t dense_param_count, int64_t tokens_processed) {
  return 2.0 * static_cast<double>(dense_param_count) * static_cast<double>(tokens_processed);
}

double combine_task_probabilities(const std::vector<double>& probs,
                                  const std::vector<double>& weights) {
  if (probs.empty()) throw std::invalid_argument("combine: no probabilities");
  std::vector<double> w = weights.empty() ? std::vector<double>(probs.size(), 1.0) : weights;
  if (w.size() != probs.size())
    throw std::invalid_argument("combine: weight count does not match probability count");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    num += w[i] * probs[i];
    den += w[i];
  }
  if (den == 0.0) throw std::invalid_argument("combine: weights sum to zero");
  return num / den;
}

}  // namespace ligr
