#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "feedrec/autodiff.hpp"
#include "feedrec/errors.hpp"

namespace feedrec {

/// Owns every learnable tensor of a model. Parameters keep stable addresses
/// for the lifetime of the store, including across moves.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  /// Registers a zero-initialized rows x cols tensor.
  Parameter<T>& add(std::string name, int rows, int cols) {
    if (index_.contains(name)) throw InputError("duplicate parameter " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Matrix<T>::Zero(rows, cols);
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>& get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InputError("unknown parameter " + std::string(name));
    return *params_[it->second];
  }
  const Parameter<T>& get(std::string_view name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::vector<std::unique_ptr<Parameter<T>>>& all() { return params_; }
  const std::vector<std::unique_ptr<Parameter<T>>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
void init_normal(Parameter<T>& p, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(normal(rng));
}

template <typename T>
void init_constant(Parameter<T>& p, double v) {
  p.value.setConstant(static_cast<T>(v));
}

}  // namespace feedrec
