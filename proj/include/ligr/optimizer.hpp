#pragma once

#include <map>

#include "ligr/graph.hpp"
#include "ligr/param_store.hpp"

namespace ligr {

// Adam with two learning-rate groups: embedding tables ("emb/" prefix)
// and dense parameters, plus global-norm gradient clipping.
struct AdamConfig {
  double lr_dense = 0.001;
  double lr_sparse = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  void step(ParamStore& params, const GradMap& grads);

 private:
  AdamConfig config_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace ligr
