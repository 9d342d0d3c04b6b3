#include "pama/params.hpp"

#include "pama/errors.hpp"

namespace pama {

ParamId ParamSet::add(std::string name, Tensor init, bool decay) {
  if (index_.contains(name)) throw UsageError("duplicate parameter name: " + name);
  const ParamId id = params_.size();
  index_.emplace(name, id);
  params_.push_back(Parameter{std::move(name), std::move(init), decay});
  return id;
}

std::optional<ParamId> ParamSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ParamSet::element_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.name.starts_with(prefix)) n += p.value.size();
  }
  return n;
}

std::vector<Tensor> ParamSet::values() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

Binding::Binding(Tape& tape, const ParamSet& params, Predicate trainable)
    : tape_(tape), params_(params), trainable_(std::move(trainable)), bound_(params.size()) {}

Binding::Binding(Tape& tape, const ParamSet& params, std::span<const Var> prebound)
    : tape_(tape), params_(params), bound_(params.size()) {
  if (prebound.size() != params.size()) throw UsageError("prebound variable count does not match parameters");
  for (std::size_t i = 0; i < prebound.size(); ++i) bound_[i] = prebound[i];
}

Var Binding::operator()(ParamId id) {
  if (id >= bound_.size()) throw UsageError("parameter id out of range");
  if (!bound_[id]) {
    const bool train = !trainable_ || trainable_(id);
    bound_[id] = tape_.leaf(params_[id].value, train);
  }
  return *bound_[id];
}

std::vector<Tensor> Binding::gradients() const {
  std::vector<Tensor> out;
  out.reserve(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (bound_[i]) {
      out.push_back(tape_.grad(*bound_[i]));
    } else {
      out.emplace_back(params_[i].value.rows(), params_[i].value.cols());
    }
  }
  return out;
}

}  // namespace pama
