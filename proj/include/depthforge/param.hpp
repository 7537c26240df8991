#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "depthforge/tensor.hpp"

namespace df {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Named parameters in insertion order. Iteration order is the serialization
// order, so it must be deterministic across runs.
class ParamStore {
 public:
  // Returns a handle sharing the stored tensor; copies alias the same data.
  Tensor add(std::string name, Tensor t, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("parameter registered twice: " + name);
    t.set_requires_grad(trainable);
    index_.emplace(name, params_.size());
    params_.push_back(Parameter{std::move(name), std::move(t), trainable});
    return params_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  // Number of trainable scalar entries, not tensors.
  std::size_t count_trainable() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p.trainable) n += p.tensor.numel();
    }
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::deque<Parameter> params_;  // stable element addresses across add()
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace df
