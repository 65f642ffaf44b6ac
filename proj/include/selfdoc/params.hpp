#pragma once

#include <string>
#include <vector>

#include "selfdoc/tensor.hpp"

namespace selfdoc {

/// Named, ordered collection of learnable tensors. Insertion order is the
/// canonical order for optimizers, checkpoints, and gradient checks.
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool weight_decay;  // matrices yes, biases and norm parameters no
  };

  Tensor add(const std::string& name, Tensor t, bool weight_decay = true) {
    for (const Entry& e : entries_) {
      if (e.name == name) throw std::invalid_argument("params: duplicate name " + name);
    }
    entries_.push_back({name, t, weight_decay});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Tensor* find(const std::string& name) {
    for (Entry& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grads() {
    for (Entry& e : entries_) e.tensor.zero_grad();
  }

  void set_requires_grad(bool value) {
    for (Entry& e : entries_) e.tensor.node->requires_grad = value;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace selfdoc
