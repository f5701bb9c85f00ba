// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "optmsm/errors.hpp"
#include "optmsm/tensor.hpp"

namespace optmsm {

/// Named dense tensors for all learnable weights, each with a gradient slot
/// and Adam moment buffers. Iteration is always in creation order so every
/// downstream consumer (optimizer, serializer, gradient check) is
/// deterministic.
class ParameterStore {
 public:
  struct Slot {
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
  };

  Tensor& create(const std::string& name, Tensor init) {
    if (slots_.count(name)) throw ConfigError("parameter already exists: " + name);
    Slot s;
    s.grad = Tensor::zeros(init.rows, init.cols);
    s.adam_m = Tensor::zeros(init.rows, init.cols);
    s.adam_v = Tensor::zeros(init.rows, init.cols);
    s.value = std::move(init);
    order_.push_back(name);
    slots_.emplace(name, std::move(s));
    return slots_.at(name).value;
  }

  bool has(const std::string& name) const { return slots_.count(name) != 0; }

  Slot& slot(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  const Slot& slot(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Tensor& value(const std::string& name) { return slot(name).value; }
  const Tensor& value(const std::string& name) const { return slot(name).value; }
  Tensor& grad(const std::string& name) { return slot(name).grad; }
  const Tensor& grad(const std::string& name) const { return slot(name).grad; }

  const std::vector<std::string>& names() const { return order_; }

  std::size_t size() const { return order_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += static_cast<std::size_t>(slot(name).value.numel());
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) {
      Tensor& g = slot(name).grad;
      std::fill(g.v.begin(), g.v.end(), 0.0);
    }
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace optmsm
