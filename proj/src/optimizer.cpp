#include "ligr/optimizer.hpp"

#include <cmath>

namespace ligr {

void Adam::step(ParamStore& params, const GradMap& grads) {
  ++t_;
  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double norm_sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double v : g.data) norm_sq += v * v;
    double norm = std::sqrt(norm_sq);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }

  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));

  for (const auto& [name, grad] : grads) {
    Tensor& p = params.get(name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      m_[name] = Tensor::zeros(p.shape);
      v_[name] = Tensor::zeros(p.shape);
      mit = m_.find(name);
    }
    Tensor& m = mit->second;
    Tensor& v = v_[name];
    double lr = name.rfind("emb/", 0) == 0 ? config_.lr_sparse : config_.lr_dense;
    for (size_t i = 0; i < p.data.size(); ++i) {
      double g = grad.data[i] * scale;
      m.data[i] = config_.beta1 * m.data[i] + (1.0 - config_.beta1) * g;
      v.data[i] = config_.beta2 * v.data[i] + (1.0 - config_.beta2) * g * g;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace ligr
