#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"

namespace uvf {

// Ordered registry of named learnable tensors. Registration order is the
// iteration order, which fixes the optimizer update order and the checkpoint
// layout, so runs are reproducible.
class ParamRegistry {
 public:
  Var add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Var v = make_leaf(std::move(init), true, name);
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

  Var find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].second;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [_, v] : items_) n += v->value.numel();
    return n;
  }

  int64_t count_with_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, v] : items_)
      if (name.rfind(prefix, 0) == 0) n += v->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [_, v] : items_) v->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::map<std::string, size_t> index_;
};

}  // namespace uvf
