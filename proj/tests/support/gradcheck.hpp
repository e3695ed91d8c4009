#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.
// It only evaluates the loss (never reads recorded gradients), so it stays
// independent of the reverse pass it checks.

#include <algorithm>
#include <cmath>
#include <string>

#include "lesinr/numkit/adam.hpp"
#include "lesinr/numkit/tape.hpp"

namespace lesinr::oracle {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  std::size_t coordinates = 0;
};

// Central-difference rounding noise is about eps * |loss| / h, so components
// smaller than kGradFloor * max(1, |loss|) are compared on that absolute scale.
inline constexpr double kGradFloor = 1e-5;

inline double relative_error(double analytic, double numeric, double loss_magnitude = 1.0) {
  const double floor = kGradFloor * std::max(1.0, std::abs(loss_magnitude));
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Step for checks through the full network. At h=1e-5 the rounding noise of a
// ten-layer loss reaches 1e-6 relative on small components; at 1e-4 the
// truncation error is still below 1e-7.
inline constexpr double kDeepStep = 1e-4;

// Five-point central difference, truncation O(h^4). Through the full training
// loss the three-point rule at kDeepStep still leaves ~3e-6 relative error on
// small components; this one stays near 1e-8 at the same step.
inline constexpr double kFivePointStep = 1e-4;

template <typename F>
double five_point_derivative(F&& f, double h) {
  return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
}

template <typename To, typename From>
numkit::ParameterSet<To> cast_params(const numkit::ParameterSet<From>& in) {
  numkit::ParameterSet<To> out;
  for (const auto& p : in) {
    std::vector<To> data(p.value.data().begin(), p.value.data().end());
    out.add(p.name, numkit::Tensor<To>(p.value.shape(), std::move(data)));
  }
  return out;
}

// `build(tape, params)` records a scalar loss and returns its Var. It must be
// callable with both float and double tapes. Analytic gradients are taken at
// precision T; the five-point differences always run at f64.
template <typename T, typename Build>
GradCheckResult check_gradients(const numkit::ParameterSet<double>& params, Build&& build, double h = kFivePointStep,
                                std::size_t max_coords_per_tensor = 0) {
  auto typed = cast_params<T>(params);
  numkit::Tape<T> tape;
  auto loss = build(tape, typed);
  const auto grads = tape.backward(loss);

  const double loss_value = static_cast<double>(tape.value(loss).item());
  auto work = params;
  auto eval = [&]() {
    numkit::Tape<double> t;
    auto l = build(t, work);
    return t.value(l).item();
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    auto& p = work[pi];
    const auto& g = grads.at(p.name);
    const std::size_t n = p.value.size();
    const std::size_t stride =
        (max_coords_per_tensor == 0 || n <= max_coords_per_tensor) ? 1 : n / max_coords_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.value[i];
      const double numeric = five_point_derivative(
          [&](double delta) {
            p.value[i] = orig + delta;
            const double v = eval();
            p.value[i] = orig;
            return v;
          },
          h);
      const double err = relative_error(static_cast<double>(g[i]), numeric, loss_value);
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace lesinr::oracle
