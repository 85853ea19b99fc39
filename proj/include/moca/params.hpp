#pragma once

#include <map>
#include <string>

#include "moca/tape.hpp"

namespace moca {

/// Named trainable tensors in deterministic (lexicographic) order.
template <typename Scalar>
class ParamSet {
 public:
  using Map = std::map<std::string, Matrix<Scalar>>;

  void add(const std::string& name, Matrix<Scalar> value) {
    if (!tensors_.emplace(name, std::move(value)).second) {
      throw ConfigError("duplicate parameter '" + name + "'");
    }
  }

  const Matrix<Scalar>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  Matrix<Scalar>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& [name, m] : tensors_) out.add(name, m.template cast<Other>());
    return out;
  }

 private:
  Map tensors_;
};

/// Parameters of a ParamSet registered as trainable leaves on one tape.
template <typename Scalar>
class Bound {
 public:
  Bound(Tape<Scalar>& tape, const ParamSet<Scalar>& params) : tape_(&tape) {
    for (const auto& [name, m] : params) vars_.emplace(name, tape.variable(m));
  }

  Var<Scalar> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("parameter '" + name + "' is not bound");
    return it->second;
  }

  Tape<Scalar>& tape() const { return *tape_; }

  /// Gradients after tape().backward(), keyed like the source ParamSet.
  std::map<std::string, Matrix<Scalar>> gradients() const {
    std::map<std::string, Matrix<Scalar>> out;
    for (const auto& [name, v] : vars_) out.emplace(name, tape_->grad(v));
    return out;
  }

 private:
  Tape<Scalar>* tape_;
  std::map<std::string, Var<Scalar>> vars_;
};

}  // namespace moca
