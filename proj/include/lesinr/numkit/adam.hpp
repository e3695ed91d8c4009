#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lesinr/numkit/tape.hpp"
#include "lesinr/numkit/tensor.hpp"

namespace lesinr::numkit {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

// Ordered collection of trainable tensors addressed by name.
template <typename T>
class ParameterSet {
 public:
  using scalar_type = T;

  Tensor<T>& add(std::string name, Tensor<T> value);

  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::vector<NamedTensor<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamHyper {
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;  // completed steps
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  static AdamState zeros_like(const ParameterSet<T>& params, AdamHyper hyper = {});
};

// One bias-corrected Adam update. Parameters with no entry in `grads` are
// treated as having a zero gradient. If any gradient is non-finite nothing is
// modified and NumericError names the offending parameter.
template <typename T>
void adam_step(ParameterSet<T>& params, const GradientSet<T>& grads, AdamState<T>& state);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template struct AdamState<float>;
extern template struct AdamState<double>;
extern template void adam_step(ParameterSet<float>&, const GradientSet<float>&, AdamState<float>&);
extern template void adam_step(ParameterSet<double>&, const GradientSet<double>&, AdamState<double>&);

}  // namespace lesinr::numkit
