#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pixnet/common.hpp"
#include "pixnet/tensor.hpp"

namespace pixnet {

// Ordered name -> tensor registry. Order is the construction order and is
// what the optimizer and checkpoint writer iterate, so it must stay stable.
template <typename S>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  void add(const std::string& name, const Tensor<S>& t) { items.emplace_back(name, t); }

  void merge(const std::string& prefix, const ParamMap& other) {
    for (const auto& [name, t] : other.items) items.emplace_back(prefix + name, t);
  }

  Tensor<S>* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, t] : items) t.zero_grad();
  }

  std::size_t count() const { return items.size(); }
};

template <typename S>
Tensor<S> param_trunc_normal(Shape shape, Rng& rng, double stddev = 0.02) {
  std::vector<S> v(numel(shape));
  for (auto& x : v) x = static_cast<S>(rng.truncated_normal(0.0, stddev));
  auto t = Tensor<S>::from(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

// He-uniform with fan-in: bound = sqrt(6 / fan_in)
template <typename S>
Tensor<S> param_kaiming_uniform(Shape shape, Rng& rng, int fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<S> v(numel(shape));
  for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
  auto t = Tensor<S>::from(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <typename S>
Tensor<S> param_const(Shape shape, S value) {
  auto t = Tensor<S>::filled(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace pixnet
