#pragma once

#include <map>
#include <string>

#include "ligr/checkpoint.hpp"
#include "ligr/graph.hpp"
#include "ligr/tensor.hpp"

namespace ligr {

// Named learnable tensors. Embedding tables live under the "emb/"
// prefix; everything else counts as dense (separate optimizer group,
// FLOPS accounting).
class ParamStore {
 public:
  ParamStore() = default;

  void set(const std::string& name, Tensor value) { params_[name] = std::move(value); }
  Tensor& get(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }

  int64_t total_param_count() const;
  int64_t dense_param_count() const;  // excludes "emb/" tables

  void save(const std::string& path) const { save_checkpoint(path, params_); }
  static ParamStore load(const std::string& path);

 private:
  std::map<std::string, Tensor> params_;
};

// Binds store parameters into a graph, one leaf per name; repeated
// binds of the same name return the existing leaf.
class ParamBinder {
 public:
  ParamBinder(Graph& graph, const ParamStore& store) : graph_(graph), store_(store) {}

  NodeId operator()(const std::string& name);

 private:
  Graph& graph_;
  const ParamStore& store_;
};

}  // namespace ligr
