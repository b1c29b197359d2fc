#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "siam/rng.hpp"
#include "siam/tensor.hpp"

namespace siam {

enum class Init { FanInUniform, Ones, Zeros };

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Init init = Init::FanInUniform;
  Index fan_in = 0;
};

/// Ordered, name-unique set of model parameters. Registration order fixes both
/// the initialization stream and the checkpoint layout.
template <typename Scalar>
class ParamStore {
 public:
  /// Adds a parameter and initializes it. Fan-in uniform draws from
  /// U(-sqrt(1/fan_in), sqrt(1/fan_in)).
  int add(const std::string& name, Shape shape, Init init, Index fan_in, Rng& rng) {
    if (index_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
    Tensor<Scalar> value(std::move(shape));
    if (init == Init::Ones) {
      value.mutable_values().setConstant(Scalar(1));
    } else if (init == Init::FanInUniform) {
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      Scalar* p = value.mutable_data();
      for (Index i = 0; i < value.size(); ++i) p[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    params_.push_back({name, std::move(value), init, fan_in});
    index_.emplace(name, static_cast<int>(params_.size() - 1));
    return static_cast<int>(params_.size() - 1);
  }

  std::size_t size() const noexcept { return params_.size(); }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return params_[static_cast<std::size_t>(it->second)];
  }
  const Parameter<Scalar>& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

  Index value_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Parameter values as forward-pass operands: watched on `tape` under their
  /// names, or the raw values when `tape` is null.
  std::vector<Tensor<Scalar>> bind(Tape<Scalar>* tape) const {
    std::vector<Tensor<Scalar>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(tape ? tape->watch(p.value, p.name) : p.value);
    return out;
  }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, int> index_;
};

}  // namespace siam
