#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wednet/autodiff.hpp"
#include "wednet/errors.hpp"

namespace wednet {

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent stream for (seed, key): parallel and serial consumers agree.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) { return splitmix64(seed ^ splitmix64(key)); }

enum class Init { fan_in_uniform, zeros, ones };

/// Owns every trainable matrix of a model in creation order. Each parameter is
/// initialized from its own stream keyed by name, so adding or removing a
/// component never shifts the initial values of the others.
template <typename S>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  /// fan_in_uniform draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Parameter<S>& create(const std::string& name, int rows, int cols, Init init = Init::fan_in_uniform, int fan_in = 0) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter '" + name + "'");
    Parameter<S> p;
    p.name = name;
    switch (init) {
      case Init::zeros:
        p.value = Mat<S>::Zero(rows, cols);
        break;
      case Init::ones:
        p.value = Mat<S>::Ones(rows, cols);
        break;
      case Init::fan_in_uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : rows));
        std::mt19937_64 rng(derive_seed(seed_, fnv1a(name)));
        std::uniform_real_distribution<double> u(-bound, bound);
        p.value.resize(rows, cols);
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(u(rng));
        break;
      }
    }
    p.grad = Mat<S>::Zero(rows, cols);
    params_.push_back(std::move(p));
    index_.emplace(name, params_.size() - 1);
    return params_.back();
  }

  Parameter<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::deque<Parameter<S>>& all() { return params_; }
  const std::deque<Parameter<S>>& all() const { return params_; }

  /// Total number of scalars.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  /// Scalars in parameters whose names start with `prefix`.
  std::size_t scalar_count(std::string_view prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (std::string_view(p.name).substr(0, prefix.size()) == prefix) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
  }

  std::vector<Mat<S>> snapshot() const {
    std::vector<Mat<S>> out;
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void restore(const std::vector<Mat<S>>& values) {
    if (values.size() != params_.size()) throw std::logic_error("restore: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
  }

 private:
  std::uint64_t seed_;
  std::deque<Parameter<S>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace wednet
