#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mixnet/autodiff.hpp"
#include "mixnet/error.hpp"
#include "mixnet/tensor.hpp"

namespace mixnet {

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases
};

/// Ordered list of parameter declarations; a pure function of the network config.
class ParamManifest {
 public:
  void add(std::string name, Shape shape, std::size_t fan_in);

  const std::vector<ParamSpec>& specs() const { return specs_; }
  std::size_t size() const { return specs_.size(); }
  std::size_t total_count() const;
  const ParamSpec* find(const std::string& name) const;

  /// Aligned text table: name, shape, count, plus a total line.
  std::string table() const;

  friend bool operator==(const ParamManifest& a, const ParamManifest& b);

 private:
  std::vector<ParamSpec> specs_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Named tensors in manifest order.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(const ParamManifest& manifest) {
    for (const auto& s : manifest.specs()) insert(s.name, BasicTensor<T>(s.shape));
  }

  void insert(const std::string& name, BasicTensor<T> value) {
    if (index_.count(name)) throw BuildError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
  }

  BasicTensor<T>& at(const std::string& name) { return entries_.at(lookup(name)).second; }
  const BasicTensor<T>& at(const std::string& name) const { return entries_.at(lookup(name)).second; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : entries_) out.insert(name, t.template cast<U>());
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw BuildError("unknown parameter " + name);
    return it->second;
  }

  std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamVars = std::unordered_map<std::string, Var>;

/// Registers every parameter of the store as a graph variable.
template <typename T>
ParamVars bind_params(Graph<T>& g, const ParamStore<T>& store) {
  ParamVars vars;
  for (const auto& [name, t] : store) vars.emplace(name, g.variable(t));
  return vars;
}

inline Var param(const ParamVars& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw BuildError("parameter " + name + " is not bound");
  return it->second;
}

}  // namespace mixnet
