#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ligr/graph.hpp"
#include "ligr/optimizer.hpp"
#include "ligr/param_store.hpp"
#include "ligr/rng.hpp"
#include "ligr/semantic_id.hpp"

namespace ligr {

struct RqVaeConfig {
  int64_t input_dim = 32;
  int64_t latent_dim = 8;
  int64_t num_codebooks = 3;
  int64_t codebook_size = 1000;
  double beta = 0.25;
  // reset when usage_ema drops below reset_threshold_frac * B / K
  double reset_threshold_frac = 0.01;
  double ema_decay = 0.99;
  double flops_weight = 0.0;
  double flops_temperature = 1.0;
  int64_t hidden_dim = 0;  // 0 -> 2 * input_dim

  int64_t hidden() const { return hidden_dim > 0 ? hidden_dim : 2 * input_dim; }
  void validate() const;
};

struct Codebook {
  Tensor vectors;                 // K x latent_dim
  std::vector<double> usage_ema;  // EMA of assignment counts per code
  Tensor sum_ema;                 // K x latent_dim EMA of assigned targets
};

struct QuantizeResult {
  std::vector<int64_t> codes;                  // c_1..c_N
  std::vector<double> quantized;               // z_q = sum of code vectors
  std::vector<std::vector<double>> residuals;  // r_1..r_N; r_N satisfies z_q + r_N == z
};

// Greedy per-level nearest-neighbor quantization (Euclidean, ties to
// the lowest index). Throws on empty codebooks.
QuantizeResult residual_quantize(const std::vector<double>& z,
                                 const std::vector<Codebook>& codebooks);

// Sum over levels of sum_k (mean_batch p_k)^2, scaled by weight. Each
// entry is a B x K matrix of soft assignment probabilities.
double flops_regularizer(const std::vector<Tensor>& soft_assignments, double weight);

// Softmax over negative squared distances with temperature, one row
// per latent.
Tensor soft_assignments(const std::vector<std::vector<double>>& latents, const Codebook& codebook,
                        double temperature);

struct ResetEvent {
  int64_t level = 0;
  int64_t code = 0;
};

struct RqTrainReport {
  double loss = 0.0;
  double reconstruction = 0.0;
  double quantization = 0.0;
  double flops_penalty = 0.0;
  std::vector<ResetEvent> resets;
};

// Residual-quantized autoencoder over content embeddings. Encoder and
// decoder are 2-layer tanh MLPs; codebooks are maintained by EMA
// assignment averages with usage-threshold resets, never by loss
// gradients; the encoder sees the quantizer through a straight-through
// estimator.
class RqVae {
 public:
  static RqVae init(RqVaeConfig config, uint64_t seed);

  const RqVaeConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::vector<Codebook>& codebooks() { return codebooks_; }
  const std::vector<Codebook>& codebooks() const { return codebooks_; }

  std::vector<double> encode(const std::vector<double>& x) const;
  std::vector<double> decode(const std::vector<double>& z_q) const;

  // graph-building encoder/decoder over a batch (rows of x)
  NodeId encode_node(Graph& g, ParamBinder& bind, NodeId x) const;
  NodeId decode_node(Graph& g, ParamBinder& bind, NodeId z) const;

  struct LossParts {
    NodeId total = -1;
    NodeId reconstruction = -1;
    NodeId quantization = -1;
    NodeId flops = -1;  // -1 when the regularizer is off
  };

  // loss graph for one batch; also reports the per-row quantization
  // so callers can reuse the assignments
  LossParts loss_node(Graph& g, const std::vector<std::vector<double>>& batch,
                      std::vector<QuantizeResult>* out_quant) const;

  RqTrainReport train_step(const std::vector<std::vector<double>>& batch, Adam& optimizer,
                           Rng& rng);

  SemanticId assign(const std::vector<double>& x) const;
  std::map<uint64_t, SemanticId> assign_corpus(
      const std::map<uint64_t, std::vector<double>>& corpus) const;

  void save(const std::string& path) const;
  static RqVae load(RqVaeConfig config, const std::string& path);

 private:
  explicit RqVae(RqVaeConfig config) : config_(config) { config_.validate(); }

  void ema_update(const std::vector<std::vector<double>>& batch,
                  const std::vector<std::vector<double>>& latents,
                  const std::vector<QuantizeResult>& quants, Rng& rng,
                  std::vector<ResetEvent>* resets);

  RqVaeConfig config_;
  ParamStore params_;
  std::vector<Codebook> codebooks_;
};

}  // namespace ligr
