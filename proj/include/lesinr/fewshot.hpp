#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lesinr/data/observations.hpp"
#include "lesinr/geo.hpp"
#include "lesinr/numkit/tensor.hpp"

namespace lesinr::fewshot {

using numkit::Tensor;

struct FewShotConfig {
  std::uint32_t negatives = 20000;  // n_n
  double lambda = 20.0;
  // Text-derived species vector w_tx; the fit is pulled towards it and starts
  // from it. Absent means w0 = 0.
  std::optional<std::vector<double>> prior{};
  std::uint32_t max_iterations = 500;
  double tolerance = 1e-6;  // on the gradient infinity-norm
  std::uint64_t seed = 0;

  void validate(std::size_t dim) const;
};

struct FewShotFit {
  std::vector<double> w;
  double objective = 0.0;
  double gradient_norm = 0.0;  // infinity-norm at w
  std::uint32_t iterations = 0;
  bool converged = false;
  std::vector<double> trace{};  // objective after each accepted step
};

struct NegativeSample {
  std::vector<geo::GeoPoint> points;  // uniform half first, then data-drawn
  bool fallback = false;              // no observations: all uniform
};

// n/2 sphere-uniform points and n - n/2 points drawn uniformly (with
// replacement) from training observation locations.
NegativeSample sample_fewshot_negatives(const std::vector<data::ObservationRecord>& train, std::uint32_t n, Rng& rng);

// L(w) = (1/n_p) sum -log s(w.f(x_i)) + (1/n_n) sum -log(1 - s(w.f(n_i)))
//        + lambda / (n_p d) ||w - w0||^2
// Returns L and writes dL/dw into `grad` when non-null.
template <typename T>
double logreg_objective(std::span<const double> w, const Tensor<T>& positives, const Tensor<T>& negatives,
                        const FewShotConfig& config, std::vector<double>* grad);

// (1/4n) F^T F of the negative features: the curvature of the negative term
// at w = 0. Shared by every fit against the same negatives.
template <typename T>
std::vector<double> negative_curvature(const Tensor<T>& negatives);

// L-BFGS from w0 whose initial inverse Hessian is the curvature at w = 0
// (computed from the negatives when not supplied), with Armijo backtracking;
// every accepted step decreases L.
template <typename T>
FewShotFit fit_logreg(const Tensor<T>& positives, const Tensor<T>& negatives, const FewShotConfig& config,
                      const std::vector<double>* curvature = nullptr);

}  // namespace lesinr::fewshot
