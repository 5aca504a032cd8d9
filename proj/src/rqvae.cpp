#include "ligr/rqvae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ligr {

void RqVaeConfig::validate() const {
  if (input_dim <= 0 || latent_dim <= 0 || num_codebooks <= 0 || codebook_size <= 0)
    throw std::invalid_argument("rqvae config: dims and codebook sizes must be positive");
  if (beta < 0.0) throw std::invalid_argument("rqvae config: beta must be >= 0");
  if (ema_decay <= 0.0 || ema_decay >= 1.0)
    throw std::invalid_argument("rqvae config: ema_decay must be in (0,1)");
  if (flops_temperature <= 0.0)
    throw std::invalid_argument("rqvae config: flops_temperature must be > 0");
}

QuantizeResult residual_quantize(const std::vector<double>& z,
                                 const std::vector<Codebook>& codebooks) {
  if (codebooks.empty()) throw std::invalid_argument("residual_quantize: no codebooks");
  const int64_t dim = static_cast<int64_t>(z.size());
  QuantizeResult result;
  std::vector<double> residual = z;
  std::vector<double> z_q(dim, 0.0);
  for (const Codebook& cb : codebooks) {
    if (cb.vectors.shape.empty() || cb.vectors.shape[0] == 0)
      throw std::invalid_argument("residual_quantize: empty codebook");
    if (cb.vectors.shape[1] != dim)
      throw std::invalid_argument("residual_quantize: codebook dim mismatch");
    int64_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < cb.vectors.shape[0]; ++k) {
      double d = 0.0;
      for (int64_t j = 0; j < dim; ++j) {
        double diff = residual[j] - cb.vectors.at(k, j);
        d += diff * diff;
      }
      if (d < best_dist) {  // strict: ties go to the lowest index
        best_dist = d;
        best = k;
      }
    }
    result.codes.push_back(best);
    for (int64_t j = 0; j < dim; ++j) {
      z_q[j] += cb.vectors.at(best, j);
      residual[j] -= cb.vectors.at(best, j);
    }
    result.residuals.push_back(residual);
  }
  result.quantized = std::move(z_q);
  // pin the final residual against z_q so z_q + r_N == z holds exactly
  for (int64_t j = 0; j < dim; ++j)
    result.residuals.back()[j] = z[j] - result.quantized[j];
  return result;
}

double flops_regularizer(const std::vector<Tensor>& soft_assignments, double weight) {
  double total = 0.0;
  for (const Tensor& probs : soft_assignments) {
    int64_t rows = probs.shape[0], cols = probs.shape[1];
    for (int64_t k = 0; k < cols; ++k) {
      double mean = 0.0;
      for (int64_t b = 0; b < rows; ++b) mean += probs.at(b, k);
      mean /= static_cast<double>(rows);
      total += mean * mean;
    }
  }
  return weight * total;
}

Tensor soft_assignments(const std::vector<std::vector<double>>& latents, const Codebook& codebook,
                        double temperature) {
  int64_t rows = static_cast<int64_t>(latents.size());
  int64_t k_count = codebook.vectors.shape[0];
  int64_t dim = codebook.vectors.shape[1];
  Tensor probs = Tensor::zeros({rows, k_count});
  for (int64_t b = 0; b < rows; ++b) {
    std::vector<double> logits(k_count);
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < k_count; ++k) {
      double d = 0.0;
      for (int64_t j = 0; j < dim; ++j) {
        double diff = latents[b][j] - codebook.vectors.at(k, j);
        d += diff * diff;
      }
      logits[k] = -d / temperature;
      mx = std::max(mx, logits[k]);
    }
    double z = 0.0;
    for (int64_t k = 0; k < k_count; ++k) z += std::exp(logits[k] - mx);
    for (int64_t k = 0; k < k_count; ++k) probs.at(b, k) = std::exp(logits[k] - mx) / z;
  }
  return probs;
}

// ----------------------------------------------------------------------
// model
// ----------------------------------------------------------------------

RqVae RqVae::init(RqVaeConfig config, uint64_t seed) {
  RqVae vae(config);
  Rng rng(seed);
  const RqVaeConfig& c = vae.config_;
  auto uniform = [&](Shape shape, int64_t fan_in) {
    Tensor t = Tensor::zeros(std::move(shape));
    double range = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-range, range);
    return t;
  };
  vae.params_.set("enc/W1", uniform({c.input_dim, c.hidden()}, c.input_dim));
  vae.params_.set("enc/b1", Tensor::zeros({c.hidden()}));
  vae.params_.set("enc/W2", uniform({c.hidden(), c.latent_dim}, c.hidden()));
  vae.params_.set("enc/b2", Tensor::zeros({c.latent_dim}));
  vae.params_.set("dec/W1", uniform({c.latent_dim, c.hidden()}, c.latent_dim));
  vae.params_.set("dec/b1", Tensor::zeros({c.hidden()}));
  vae.params_.set("dec/W2", uniform({c.hidden(), c.input_dim}, c.hidden()));
  vae.params_.set("dec/b2", Tensor::zeros({c.input_dim}));

  vae.codebooks_.resize(c.num_codebooks);
  for (Codebook& cb : vae.codebooks_) {
    cb.vectors = Tensor::zeros({c.codebook_size, c.latent_dim});
    for (double& v : cb.vectors.data) v = rng.normal(0.0, 1.0);
    cb.usage_ema.assign(c.codebook_size, 1.0);
    cb.sum_ema = cb.vectors;
  }
  return vae;
}

NodeId RqVae::encode_node(Graph& g, ParamBinder& bind, NodeId x) const {
  NodeId h = g.tanh_op(g.add_rows(g.matmul(x, bind("enc/W1")), bind("enc/b1")));
  return g.add_rows(g.matmul(h, bind("enc/W2")), bind("enc/b2"));
}

NodeId RqVae::decode_node(Graph& g, ParamBinder& bind, NodeId z) const {
  NodeId h = g.tanh_op(g.add_rows(g.matmul(z, bind("dec/W1")), bind("dec/b1")));
  return g.add_rows(g.matmul(h, bind("dec/W2")), bind("dec/b2"));
}

namespace {
std::vector<double> mlp2(const ParamStore& p, const char* w1, const char* b1, const char* w2,
                         const char* b2, const std::vector<double>& x) {
  const Tensor& W1 = p.at(w1);
  const Tensor& B1 = p.at(b1);
  const Tensor& W2 = p.at(w2);
  const Tensor& B2 = p.at(b2);
  std::vector<double> h(W1.shape[1]);
  for (int64_t j = 0; j < W1.shape[1]; ++j) {
    double acc = B1.data[j];
    for (int64_t i = 0; i < W1.shape[0]; ++i) acc += x[i] * W1.at(i, j);
    h[j] = std::tanh(acc);
  }
  std::vector<double> out(W2.shape[1]);
  for (int64_t j = 0; j < W2.shape[1]; ++j) {
    double acc = B2.data[j];
    for (int64_t i = 0; i < W2.shape[0]; ++i) acc += h[i] * W2.at(i, j);
    out[j] = acc;
  }
  return out;
}
}  // namespace

std::vector<double> RqVae::encode(const std::vector<double>& x) const {
  if (static_cast<int64_t>(x.size()) != config_.input_dim)
    throw std::invalid_argument("rqvae encode: input dim mismatch");
  auto z = mlp2(params_, "enc/W1", "enc/b1", "enc/W2", "enc/b2", x);
  for (double v : z)
    if (!std::isfinite(v)) throw std::runtime_error("rqvae encode: non-finite latent");
  return z;
}

std::vector<double> RqVae::decode(const std::vector<double>& z_q) const {
  if (static_cast<int64_t>(z_q.size()) != config_.latent_dim)
    throw std::invalid_argument("rqvae decode: latent dim mismatch");
  return mlp2(params_, "dec/W1", "dec/b1", "dec/W2", "dec/b2", z_q);
}

RqVae::LossParts RqVae::loss_node(Graph& g, const std::vector<std::vector<double>>& batch,
                                  std::vector<QuantizeResult>* out_quant) const {
  const int64_t B = static_cast<int64_t>(batch.size());
  if (B == 0) throw std::invalid_argument("rqvae loss: empty batch");
  const RqVaeConfig& c = config_;

  Tensor x = Tensor::zeros({B, c.input_dim});
  for (int64_t b = 0; b < B; ++b) {
    if (static_cast<int64_t>(batch[b].size()) != c.input_dim)
      throw std::invalid_argument("rqvae loss: input dim mismatch");
    for (int64_t j = 0; j < c.input_dim; ++j) x.at(b, j) = batch[b][j];
  }

  ParamBinder bind(g, params_);
  NodeId x_node = g.constant(x);
  NodeId z = encode_node(g, bind, x_node);

  // quantize current latents outside the graph
  const Tensor& z_val = g.value(z);
  Tensor zq = Tensor::zeros({B, c.latent_dim});
  std::vector<QuantizeResult> quants(B);
  for (int64_t b = 0; b < B; ++b) {
    std::vector<double> row(z_val.data.begin() + b * c.latent_dim,
                            z_val.data.begin() + (b + 1) * c.latent_dim);
    quants[b] = residual_quantize(row, codebooks_);
    for (int64_t j = 0; j < c.latent_dim; ++j) zq.at(b, j) = quants[b].quantized[j];
  }

  // straight-through: z_q = z + stopgrad(z_q - z)
  Tensor delta = zq;
  for (size_t i = 0; i < delta.data.size(); ++i) delta.data[i] -= z_val.data[i];
  NodeId zq_node = g.add(z, g.constant(std::move(delta)));

  NodeId xhat = decode_node(g, bind, zq_node);
  NodeId diff = g.sub(x_node, xhat);
  NodeId recon = g.scale(g.sum(g.mul(diff, diff)), 1.0 / static_cast<double>(B));

  NodeId qdiff = g.sub(z, g.constant(zq));
  NodeId quant = g.scale(g.sum(g.mul(qdiff, qdiff)), 1.0 / static_cast<double>(B));

  LossParts parts;
  parts.reconstruction = recon;
  parts.quantization = quant;
  NodeId loss = g.add(recon, g.scale(quant, c.beta));

  if (c.flops_weight > 0.0) {
    // soft assignments from in-graph residuals against constant
    // codebooks; the per-row ||r||^2 term is dropped since softmax is
    // shift-invariant per row
    NodeId residual = z;
    BoolMask full(B, c.codebook_size);
    std::fill(full.allow.begin(), full.allow.end(), uint8_t{1});
    Tensor mean_row = Tensor::zeros({1, B});
    for (int64_t b = 0; b < B; ++b) mean_row.at(0, b) = 1.0 / static_cast<double>(B);
    NodeId mean_row_node = g.constant(std::move(mean_row));
    NodeId flops_total = g.constant(Tensor::scalar(0.0));

    for (int64_t level = 0; level < c.num_codebooks; ++level) {
      const Codebook& cb = codebooks_[level];
      Tensor ct = Tensor::zeros({c.latent_dim, c.codebook_size});
      Tensor csq = Tensor::zeros({c.codebook_size});
      for (int64_t k = 0; k < c.codebook_size; ++k) {
        double sq = 0.0;
        for (int64_t j = 0; j < c.latent_dim; ++j) {
          double v = cb.vectors.at(k, j);
          ct.at(j, k) = v;
          sq += v * v;
        }
        csq.data[k] = -sq / c.flops_temperature;
      }
      NodeId logits = g.add_rows(
          g.scale(g.matmul(residual, g.constant(std::move(ct))), 2.0 / c.flops_temperature),
          g.constant(std::move(csq)));
      NodeId probs = g.masked_softmax(logits, full);
      NodeId mean_probs = g.matmul(mean_row_node, probs);  // 1 x K
      flops_total = g.add(flops_total, g.sum(g.mul(mean_probs, mean_probs)));

      if (level + 1 < c.num_codebooks) {
        Tensor codes = Tensor::zeros({B, c.latent_dim});
        for (int64_t b = 0; b < B; ++b)
          for (int64_t j = 0; j < c.latent_dim; ++j)
            codes.at(b, j) = cb.vectors.at(quants[b].codes[level], j);
        residual = g.sub(residual, g.constant(std::move(codes)));
      }
    }
    parts.flops = flops_total;
    loss = g.add(loss, g.scale(flops_total, c.flops_weight));
  }

  parts.total = loss;
  if (out_quant) *out_quant = std::move(quants);
  return parts;
}

void RqVae::ema_update(const std::vector<std::vector<double>>& batch,
                       const std::vector<std::vector<double>>& latents,
                       const std::vector<QuantizeResult>& quants, Rng& rng,
                       std::vector<ResetEvent>* resets) {
  (void)batch;
  const RqVaeConfig& c = config_;
  const int64_t B = static_cast<int64_t>(latents.size());
  const double threshold =
      c.reset_threshold_frac * static_cast<double>(B) / static_cast<double>(c.codebook_size);

  for (int64_t level = 0; level < c.num_codebooks; ++level) {
    Codebook& cb = codebooks_[level];
    std::vector<double> counts(c.codebook_size, 0.0);
    Tensor sums = Tensor::zeros({c.codebook_size, c.latent_dim});
    // quantization target at this level: z for level 0, else r_{level-1}
    for (int64_t b = 0; b < B; ++b) {
      const std::vector<double>& target =
          level == 0 ? latents[b] : quants[b].residuals[level - 1];
      int64_t code = quants[b].codes[level];
      counts[code] += 1.0;
      for (int64_t j = 0; j < c.latent_dim; ++j) sums.at(code, j) += target[j];
    }
    for (int64_t k = 0; k < c.codebook_size; ++k) {
      cb.usage_ema[k] = c.ema_decay * cb.usage_ema[k] + (1.0 - c.ema_decay) * counts[k];
      for (int64_t j = 0; j < c.latent_dim; ++j) {
        cb.sum_ema.at(k, j) =
            c.ema_decay * cb.sum_ema.at(k, j) + (1.0 - c.ema_decay) * sums.at(k, j);
        cb.vectors.at(k, j) = cb.sum_ema.at(k, j) / (cb.usage_ema[k] + 1e-8);
      }
    }
    for (int64_t k = 0; k < c.codebook_size; ++k) {
      if (cb.usage_ema[k] >= threshold) continue;
      // reset to the quantization target of a random batch element
      int64_t pick = rng.uniform_int(B);
      const std::vector<double>& target =
          level == 0 ? latents[pick] : quants[pick].residuals[level - 1];
      for (int64_t j = 0; j < c.latent_dim; ++j) {
        cb.vectors.at(k, j) = target[j];
        cb.sum_ema.at(k, j) = target[j];
      }
      cb.usage_ema[k] = 1.0;
      if (resets) resets->push_back({level, k});
    }
  }
}

RqTrainReport RqVae::train_step(const std::vector<std::vector<double>>& batch, Adam& optimizer,
                                Rng& rng) {
  Graph g(Precision::F32);
  std::vector<QuantizeResult> quants;
  LossParts parts = loss_node(g, batch, &quants);
  GradMap grads = g.backward(parts.total);
  optimizer.step(params_, grads);

  RqTrainReport report;
  report.loss = g.value(parts.total).data[0];
  report.reconstruction = g.value(parts.reconstruction).data[0];
  report.quantization = g.value(parts.quantization).data[0];
  report.flops_penalty = parts.flops >= 0 ? g.value(parts.flops).data[0] : 0.0;

  // latents for the EMA update: z = z_q + r_N holds exactly
  const int64_t B = static_cast<int64_t>(batch.size());
  std::vector<std::vector<double>> latents(B);
  for (int64_t b = 0; b < B; ++b) {
    const QuantizeResult& q = quants[b];
    latents[b].resize(config_.latent_dim);
    for (int64_t j = 0; j < config_.latent_dim; ++j)
      latents[b][j] = q.quantized[j] + q.residuals.back()[j];
  }
  ema_update(batch, latents, quants, rng, &report.resets);
  return report;
}

SemanticId RqVae::assign(const std::vector<double>& x) const {
  QuantizeResult q = residual_quantize(encode(x), codebooks_);
  return SemanticId{q.codes};
}

std::map<uint64_t, SemanticId> RqVae::assign_corpus(
    const std::map<uint64_t, std::vector<double>>& corpus) const {
  std::map<uint64_t, SemanticId> out;
  for (const auto& [id, embedding] : corpus) out.emplace(id, assign(embedding));
  return out;
}

void RqVae::save(const std::string& path) const {
  std::map<std::string, Tensor> entries = params_.all();
  for (size_t i = 0; i < codebooks_.size(); ++i) {
    entries["codebook/" + std::to_string(i)] = codebooks_[i].vectors;
    entries["codebook_usage/" + std::to_string(i)] = Tensor::vec(codebooks_[i].usage_ema);
    entries["codebook_sum/" + std::to_string(i)] = codebooks_[i].sum_ema;
  }
  save_checkpoint(path, entries);
}

RqVae RqVae::load(RqVaeConfig config, const std::string& path) {
  RqVae vae(config);
  auto entries = load_checkpoint(path);
  vae.codebooks_.resize(config.num_codebooks);
  for (int64_t i = 0; i < config.num_codebooks; ++i) {
    vae.codebooks_[i].vectors = entries.at("codebook/" + std::to_string(i));
    const Tensor& usage = entries.at("codebook_usage/" + std::to_string(i));
    vae.codebooks_[i].usage_ema.assign(usage.data.begin(), usage.data.end());
    vae.codebooks_[i].sum_ema = entries.at("codebook_sum/" + std::to_string(i));
    entries.erase("codebook/" + std::to_string(i));
    entries.erase("codebook_usage/" + std::to_string(i));
    entries.erase("codebook_sum/" + std::to_string(i));
  }
  for (auto& [name, tensor] : entries) vae.params_.set(name, std::move(tensor));
  return vae;
}

}  // namespace ligr
