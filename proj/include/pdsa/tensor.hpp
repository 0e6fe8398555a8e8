#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdsa/rng.hpp"

namespace pdsa {

/// Dense row-major tensor of rank 1 or 2. The training path instantiates
/// T = float, correctness tests instantiate T = double.
template <typename T>
struct Tensor {
  static_assert(std::is_floating_point_v<T>);

  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
  }
  Tensor(std::vector<std::int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != static_cast<std::size_t>(numel_of(shape)))
      throw std::invalid_argument("tensor data length does not match shape");
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d < 1) throw std::invalid_argument("tensor dimensions must be >= 1");
      n *= d;
    }
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  T at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }
};

/// Named parameter tensors plus their accumulated gradients and optimizer
/// moments. Entry order is creation order and defines the deterministic
/// iteration order everywhere (gradient merge, checkpoints, updates).
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> m, v;  // AdamW moments, sized on first step
  };

  int add(const std::string& name, std::vector<std::int64_t> shape, std::vector<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    if (value.size() != static_cast<std::size_t>(Tensor<T>::numel_of(shape)))
      throw std::invalid_argument("parameter value length mismatch for " + name);
    Entry e;
    e.name = name;
    e.shape = std::move(shape);
    e.value = std::move(value);
    e.grad.assign(e.value.size(), T(0));
    entries_.push_back(std::move(e));
    index_[name] = static_cast<int>(entries_.size()) - 1;
    return static_cast<int>(entries_.size()) - 1;
  }

  int lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(int i) { return entries_.at(static_cast<std::size_t>(i)); }
  const Entry& at(int i) const { return entries_.at(static_cast<std::size_t>(i)); }
  Entry& at(const std::string& name) { return at(lookup(name)); }
  const Entry& at(const std::string& name) const { return at(lookup(name)); }

  std::size_t size() const { return entries_.size(); }
  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::int64_t>(e.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), T(0));
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

/// Glorot-uniform weight plus zero bias for a [rows_out x cols_in] map.
template <typename T>
int add_linear_weight(ParamStore<T>& store, const std::string& name, std::int64_t out,
                      std::int64_t in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<T> w(static_cast<std::size_t>(out * in));
  for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
  return store.add(name, {out, in}, std::move(w));
}

template <typename T>
int add_zeros(ParamStore<T>& store, const std::string& name, std::vector<std::int64_t> shape) {
  std::vector<T> z(static_cast<std::size_t>(Tensor<T>::numel_of(shape)), T(0));
  return store.add(name, std::move(shape), std::move(z));
}

template <typename T>
int add_ones(ParamStore<T>& store, const std::string& name, std::vector<std::int64_t> shape) {
  std::vector<T> o(static_cast<std::size_t>(Tensor<T>::numel_of(shape)), T(1));
  return store.add(name, std::move(shape), std::move(o));
}

}  // namespace pdsa
