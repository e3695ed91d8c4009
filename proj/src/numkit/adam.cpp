#include "lesinr/numkit/adam.hpp"

#include <cmath>

namespace lesinr::numkit {

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.back().value;
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParameterSet<T>& params, AdamHyper hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

template <typename T>
void adam_step(ParameterSet<T>& params, const GradientSet<T>& grads, AdamState<T>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam state tracks " + std::to_string(state.m.size()) + " tensors, parameter set has " +
                         std::to_string(params.size()));
  }
  std::vector<const Tensor<T>*> g(params.size(), nullptr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    if (it->second.shape() != p.value.shape()) {
      throw DimensionError("gradient for '" + p.name + "' has shape " + shape_string(it->second.shape()) +
                           ", parameter has " + shape_string(p.value.shape()));
    }
    for (auto x : it->second.data()) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
    g[i] = &it->second;
  }

  const auto& h = state.hyper;
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T step_size = static_cast<T>(h.learning_rate / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(h.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const T gk = g[i] ? g[i]->data()[k] : T{0};
      m[k] = b1 * m[k] + (T{1} - b1) * gk;
      v[k] = b2 * v[k] + (T{1} - b2) * gk * gk;
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
  state.step = t;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterSet<float>&, const GradientSet<float>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, const GradientSet<double>&, AdamState<double>&);

}  // namespace lesinr::numkit
