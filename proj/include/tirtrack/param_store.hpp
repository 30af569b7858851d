#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tirtrack/autograd.hpp"
#include "tirtrack/tensor.hpp"

namespace tirtrack {

/// Named parameters, each a graph leaf with its own gradient slot. Iteration
/// order is lexicographic by name, which keeps optimizers and serialization
/// deterministic.
class ParamStore {
 public:
  struct Entry {
    Var var;
    bool trainable = true;
  };

  Var add(const std::string& name, Tensor init, bool trainable = true) {
    if (entries_.count(name)) contract_fail("param store: duplicate name '", name, "'");
    Var v = Var::leaf(std::move(init), trainable);
    entries_.emplace(name, Entry{v, trainable});
    return v;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Var& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) contract_fail("param store: no parameter '", name, "'");
    return it->second.var;
  }

  Var get_or_undefined(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? Var{} : it->second.var;
  }

  bool trainable(const std::string& name) const { return entries_.at(name).trainable; }

  /// Mutable access to a parameter's values (optimizer steps, probes).
  std::span<double> values_mut(const std::string& name) {
    return get(name).node()->value.data_mut();
  }

  /// Replace a parameter's value; the shape must match.
  void assign(const std::string& name, const Tensor& value) {
    Node* n = get(name).node();
    if (n->value.shape() != value.shape()) {
      contract_fail("param store: shape mismatch for '", name, "': have ",
                    shape_str(n->value.shape()), ", got ", shape_str(value.shape()));
    }
    n->value = value;
  }

  void zero_grad() {
    for (auto& [name, e] : entries_) e.var.node()->grad.clear();
  }

  /// Gradient slot; zeros when nothing has been accumulated yet.
  std::vector<double> grad(const std::string& name) const {
    Node* n = get(name).node();
    if (n->grad.empty()) return std::vector<double>(n->value.numel(), 0.0);
    return n->grad;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.var.numel();
    return n;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  /// Deep copy: fresh leaves holding equal values.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, e] : entries_) out.add(name, e.var.value(), e.trainable);
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

/// Random tensors for weight initialization.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data_mut()) v = dist(rng_);
    return t;
  }

  /// Normal truncated to two standard deviations (resampled).
  Tensor trunc_normal(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : t.data_mut()) {
      double z = dist(rng_);
      while (std::abs(z) > 2.0) z = dist(rng_);
      v = z * stddev;
    }
    return t;
  }

  Tensor uniform(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data_mut()) v = dist(rng_);
    return t;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace tirtrack
