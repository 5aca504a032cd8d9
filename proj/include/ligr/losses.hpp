#pragma once

#include <optional>
#include <vector>

#include "ligr/events.hpp"
#include "ligr/graph.hpp"

namespace ligr {

struct LossConfig {
  // per-task weights over [click, long_dwell, like, comment, share,
  // vote, contribution]; empty means all ones
  std::vector<double> task_weights;
  double attention_rank_weight = 0.0;

  std::vector<double> effective_weights() const;
};

// action multi-hot (n x kCount) -> task labels (n x kNumTasks), where
// the contribution column is the OR of like/comment/share/vote
Tensor derive_task_labels(const Tensor& action_labels);

// Mean over unmasked items of weighted per-task BCE-with-logits.
// All-masked input yields a constant zero with zero gradients.
NodeId multitask_bce_node(Graph& g, NodeId logits, const Tensor& action_labels,
                          const std::vector<uint8_t>& item_mask, const LossConfig& config);
double multitask_bce(const Tensor& logits, const Tensor& action_labels,
                     const std::vector<uint8_t>& item_mask, const LossConfig& config);

// Session-aggregated listwise loss: per session with >= 2 items,
// cross-entropy between normalized relevance and the softmax attention
// allocation of the scores; mean over qualifying sessions. Relevance
// must be non-negative; an all-zero session falls back to uniform.
NodeId attention_rank_loss_node(Graph& g, NodeId scores, const std::vector<double>& relevance,
                                const std::vector<int64_t>& session_ids);
double attention_rank_loss(const std::vector<double>& scores, const std::vector<double>& relevance,
                           const std::vector<int64_t>& session_ids);

// Probability that a random positive outranks a random negative; ties
// count 0.5. Exact rank-sum implementation. Empty result on
// single-class input.
std::optional<double> roc_auc(const std::vector<double>& scores,
                              const std::vector<uint8_t>& labels);

// Mean BCE divided by the entropy of the empirical base rate (natural
// log). 1.0 for a predictor that always outputs logit(base rate).
std::optional<double> normalized_entropy(const std::vector<double>& logits,
                                         const std::vector<uint8_t>& labels);

// FLOPS ~ 2 * dense parameters * tokens processed; plot-axis
// approximation, not a hardware measurement.
double estimate_training_flops(int64_t dense_param_count, int64_t tokens_processed);

// Serving-side pointwise score: weighted mean of per-task
// probabilities (uniform when weights are empty).
double combine_task_probabilities(const std::vector<double>& probs,
                                  const std::vector<double>& weights);

}  // namespace ligr
