#include "ligr/param_store.hpp"

#include <stdexcept>

namespace ligr {

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("param store: no parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("param store: no parameter " + name);
  return it->second;
}

int64_t ParamStore::total_param_count() const {
  int64_t n = 0;
  for (const auto& [name, tensor] : params_) n += tensor.numel();
  return n;
}

int64_t ParamStore::dense_param_count() const {
  int64_t n = 0;
  for (const auto& [name, tensor] : params_) {
    if (name.rfind("emb/", 0) != 0) n += tensor.numel();
  }
  return n;
}

ParamStore ParamStore::load(const std::string& path) {
  ParamStore store;
  store.params_ = load_checkpoint(path);
  return store;
}

NodeId ParamBinder::operator()(const std::string& name) {
  NodeId existing = graph_.find_param(name);
  if (existing >= 0) return existing;
  return graph_.param(name, store_.at(name));
}

}  // namespace ligr
