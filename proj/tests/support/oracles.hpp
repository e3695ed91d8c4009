#pragma once

// Independent reference implementations: quadratic-time AP, a Newton solver
// for the few-shot objective, and the unsubsampled training loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lesinr/geo.hpp"
#include "lesinr/numkit/tensor.hpp"

namespace lesinr::oracle {

// Textbook AP for distinct scores: mean over positives of the precision at
// that positive's rank. Quadratic on purpose.
inline double textbook_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double sum = 0.0;
  int positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++positives;
    int above = 0, above_pos = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] >= s[i]) {
        ++above;
        above_pos += y[j];
      }
    }
    sum += double(above_pos) / above;
  }
  return sum / positives;
}

inline numkit::Tensor<double> random_features(std::size_t n, std::size_t d, Rng& rng, double shift = 0.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  numkit::Tensor<double> t(numkit::Shape{n, d});
  for (auto& v : t.data()) v = g(rng) + shift;
  return t;
}

inline std::vector<double> random_vector(std::size_t d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = g(rng);
  return v;
}

inline double norm2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Written out from the definition, with a naive log-sigmoid.
struct NaiveLogreg {
  const numkit::Tensor<double>& pos;
  const numkit::Tensor<double>& neg;
  double lambda;
  std::vector<double> w0;

  double reg() const { return lambda / (double(pos.rows()) * double(pos.cols())); }
  static double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }
  double margin(const numkit::Tensor<double>& f, std::size_t i, const std::vector<double>& w) const {
    double z = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) z += f.at(i, k) * w[k];
    return z;
  }
  std::vector<double> gradient(const std::vector<double>& w) const {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t i = 0; i < pos.rows(); ++i) {
      const double c = (sig(margin(pos, i, w)) - 1.0) / double(pos.rows());
      for (std::size_t k = 0; k < w.size(); ++k) g[k] += c * pos.at(i, k);
    }
    for (std::size_t i = 0; i < neg.rows(); ++i) {
      const double c = sig(margin(neg, i, w)) / double(neg.rows());
      for (std::size_t k = 0; k < w.size(); ++k) g[k] += c * neg.at(i, k);
    }
    for (std::size_t k = 0; k < w.size(); ++k) g[k] += 2.0 * reg() * (w[k] - w0[k]);
    return g;
  }
  std::vector<std::vector<double>> hessian(const std::vector<double>& w) const {
    const std::size_t d = w.size();
    std::vector<std::vector<double>> h(d, std::vector<double>(d, 0.0));
    auto add = [&](const numkit::Tensor<double>& f, double n) {
      for (std::size_t i = 0; i < f.rows(); ++i) {
        const double s = sig(margin(f, i, w));
        const double c = s * (1.0 - s) / n;
        for (std::size_t a = 0; a < d; ++a) {
          for (std::size_t b = 0; b < d; ++b) h[a][b] += c * f.at(i, a) * f.at(i, b);
        }
      }
    };
    add(pos, double(pos.rows()));
    add(neg, double(neg.rows()));
    for (std::size_t a = 0; a < d; ++a) h[a][a] += 2.0 * reg();
    return h;
  }
  // Newton iterations with Gaussian elimination; quadratic convergence on
  // this strongly convex objective.
  std::vector<double> newton() const {
    std::vector<double> w = w0;
    for (int it = 0; it < 100; ++it) {
      auto h = hessian(w);
      auto g = gradient(w);
      const std::size_t d = w.size();
      for (std::size_t c = 0; c < d; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < d; ++r) {
          if (std::abs(h[r][c]) > std::abs(h[p][c])) p = r;
        }
        std::swap(h[c], h[p]);
        std::swap(g[c], g[p]);
        for (std::size_t r = c + 1; r < d; ++r) {
          const double f = h[r][c] / h[c][c];
          for (std::size_t k = c; k < d; ++k) h[r][k] -= f * h[c][k];
          g[r] -= f * g[c];
        }
      }
      std::vector<double> step(d);
      for (std::size_t c = d; c-- > 0;) {
        double s = g[c];
        for (std::size_t k = c + 1; k < d; ++k) s -= h[c][k] * step[k];
        step[c] = s / h[c][c];
      }
      double size = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        w[k] -= step[k];
        size = std::max(size, std::abs(step[k]));
      }
      if (size < 1e-15) break;
    }
    return w;
  }
};


// Unsubsampled assume-negative loss: every other species at the observation
// and every species at the random location, each with unit weight.
inline double full_loss(const std::vector<double>& y, std::size_t true_row, const std::vector<double>& yr, double lambda) {
  const double s = static_cast<double>(y.size());
  double total = lambda * std::log(y[true_row]);
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (j != true_row) total += std::log(1.0 - y[j]);
    total += std::log(1.0 - yr[j]);
  }
  return -total / s;
}

// All size-k subsets of `pool`.
inline std::vector<std::vector<std::size_t>> subsets(const std::vector<std::size_t>& pool, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<bool> pick(pool.size(), false);
  std::fill(pick.begin(), pick.begin() + static_cast<long>(k), true);
  do {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pick[i]) s.push_back(pool[i]);
    }
    out.push_back(std::move(s));
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return out;
}

}  // namespace lesinr::oracle
