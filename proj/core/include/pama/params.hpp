#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pama/tape.hpp"

namespace pama {

using ParamId = std::size_t;

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;  // receives decoupled weight decay
};

/// Ordered, named collection of trainable tensors.
class ParamSet {
 public:
  ParamId add(std::string name, Tensor init, bool decay);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](ParamId id) { return params_[id]; }
  const Parameter& operator[](ParamId id) const { return params_[id]; }
  std::optional<ParamId> find(std::string_view name) const;
  /// Total number of scalars across all parameters.
  std::size_t element_count() const;
  /// Number of scalars over parameters whose name starts with `prefix`.
  std::size_t element_count(std::string_view prefix) const;

  std::vector<Tensor> values() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, ParamId> index_;
};

/// Binds a ParamSet onto a Tape for one forward pass. Leaves are created
/// lazily on first use, so parameters a pass never touches cost nothing.
class Binding {
 public:
  using Predicate = std::function<bool(ParamId)>;

  /// `trainable` selects which parameters become gradient-carrying leaves;
  /// the rest are recorded as constants. Default: all trainable.
  Binding(Tape& tape, const ParamSet& params, Predicate trainable = {});
  /// Uses the given variables (one per parameter, in order) instead of
  /// creating leaves. Lets grad_check drive a model objective.
  Binding(Tape& tape, const ParamSet& params, std::span<const Var> prebound);

  Var operator()(ParamId id);
  Tape& tape() noexcept { return tape_; }
  const ParamSet& params() const noexcept { return params_; }

  /// Per-parameter gradients after tape().backward(); zeros where nothing flowed.
  std::vector<Tensor> gradients() const;

 private:
  Tape& tape_;
  const ParamSet& params_;
  Predicate trainable_;
  std::vector<std::optional<Var>> bound_;
};

}  // namespace pama
