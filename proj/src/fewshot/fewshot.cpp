#include "lesinr/fewshot.hpp"
#include "lesinr/numkit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace lesinr::fewshot {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 60;
constexpr std::size_t kHistory = 10;

// -log(sigmoid(z)) without overflow.
double softplus_neg(double z) { return std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <typename T>
void margins(const Tensor<T>& f, std::span<const double> w, std::vector<double>& z) {
  const std::size_t n = f.rows(), d = f.cols();
  z.resize(n);
  const T* data = f.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = data + i * d;
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t k = 0;
    for (; k + 4 <= d; k += 4) {
      s0 += row[k] * w[k];
      s1 += row[k + 1] * w[k + 1];
      s2 += row[k + 2] * w[k + 2];
      s3 += row[k + 3] * w[k + 3];
    }
    for (; k < d; ++k) s0 += row[k] * w[k];
    z[i] = (s0 + s1) + (s2 + s3);
  }
}

template <typename T>
void accumulate_rows(const Tensor<T>& f, const std::vector<double>& coef, std::vector<double>& grad) {
  const std::size_t d = f.cols();
  const T* data = f.data().data();
  for (std::size_t i = 0; i < f.rows(); ++i) {
    const double c = coef[i];
    if (c == 0.0) continue;
    const T* row = data + i * d;
    for (std::size_t k = 0; k < d; ++k) grad[k] += c * row[k];
  }
}

struct Problem {
  std::size_t d;
  double n_p, n_n, reg;  // reg = lambda / (n_p d)
  std::vector<double> w0;
};

template <typename T>
Problem make_problem(const Tensor<T>& pos, const Tensor<T>& neg, const FewShotConfig& config) {
  if (pos.rank() != 2 || neg.rank() != 2 || pos.cols() != neg.cols()) {
    throw DimensionError("positive features " + numkit::shape_string(pos.shape()) + " and negative features " +
                         numkit::shape_string(neg.shape()) + " do not share a width");
  }
  const std::size_t d = pos.cols();
  config.validate(d);
  if (pos.rows() == 0) throw ConfigError("few-shot fit needs at least one positive");
  if (neg.rows() == 0) throw ConfigError("few-shot fit needs negatives");
  for (auto v : pos.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite positive feature");
  }
  for (auto v : neg.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite negative feature");
  }
  Problem p{d, static_cast<double>(pos.rows()), static_cast<double>(neg.rows()),
            config.lambda / (static_cast<double>(pos.rows()) * static_cast<double>(d)),
            config.prior ? *config.prior : std::vector<double>(d, 0.0)};
  return p;
}

double loss_from_margins(const Problem& p, std::span<const double> w, const std::vector<double>& zp,
                         const std::vector<double>& zn) {
  double lp = 0.0, ln = 0.0, r = 0.0;
  for (double z : zp) lp += softplus_neg(z);
  for (double z : zn) ln += softplus_neg(-z);
  for (std::size_t k = 0; k < p.d; ++k) r += (w[k] - p.w0[k]) * (w[k] - p.w0[k]);
  return lp / p.n_p + ln / p.n_n + p.reg * r;
}

template <typename T>
void gradient_from_margins(const Problem& p, std::span<const double> w, const Tensor<T>& pos, const Tensor<T>& neg,
                           const std::vector<double>& zp, const std::vector<double>& zn, std::vector<double>& grad) {
  grad.assign(p.d, 0.0);
  std::vector<double> coef(zp.size());
  for (std::size_t i = 0; i < zp.size(); ++i) coef[i] = (sigmoid(zp[i]) - 1.0) / p.n_p;
  accumulate_rows(pos, coef, grad);
  coef.resize(zn.size());
  for (std::size_t i = 0; i < zn.size(); ++i) coef[i] = sigmoid(zn[i]) / p.n_n;
  accumulate_rows(neg, coef, grad);
  for (std::size_t k = 0; k < p.d; ++k) grad[k] += 2.0 * p.reg * (w[k] - p.w0[k]);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

void FewShotConfig::validate(std::size_t dim) const {
  if (negatives < 2) throw ConfigError("few-shot fit needs at least 2 negatives");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
  if (prior) {
    if (prior->size() != dim) {
      throw DimensionError("prior has length " + std::to_string(prior->size()) + ", features have width " +
                           std::to_string(dim));
    }
    for (double v : *prior) {
      if (!std::isfinite(v)) throw NumericError("non-finite prior vector");
    }
  }
}

NegativeSample sample_fewshot_negatives(const std::vector<data::ObservationRecord>& train, std::uint32_t n, Rng& rng) {
  if (n < 2) throw ConfigError("need at least 2 few-shot negatives");
  NegativeSample out;
  out.fallback = train.empty();
  const std::uint32_t uniform = out.fallback ? n : n / 2;
  out.points.reserve(n);
  for (std::uint32_t i = 0; i < uniform; ++i) out.points.push_back(geo::sample_uniform_location(rng));
  if (!out.fallback) {
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    for (std::uint32_t i = uniform; i < n; ++i) out.points.push_back(train[pick(rng)].location());
  }
  return out;
}

template <typename T>
double logreg_objective(std::span<const double> w, const Tensor<T>& positives, const Tensor<T>& negatives,
                        const FewShotConfig& config, std::vector<double>* grad) {
  const auto p = make_problem(positives, negatives, config);
  if (w.size() != p.d) throw DimensionError("weight vector length does not match feature width");
  std::vector<double> zp, zn;
  margins(positives, w, zp);
  margins(negatives, w, zn);
  if (grad) gradient_from_margins(p, w, positives, negatives, zp, zn, *grad);
  return loss_from_margins(p, w, zp, zn);
}

template <typename T>
std::vector<double> negative_curvature(const Tensor<T>& negatives) {
  if (negatives.rank() != 2 || negatives.rows() == 0) throw DimensionError("curvature needs a [n, d] feature matrix");
  const std::size_t n = negatives.rows(), d = negatives.cols();
  std::vector<T> gram(d * d, T{0});
  numkit::kernels::matmul_tn_accumulate<T>(negatives.data(), negatives.data(), gram, n, d, d);
  std::vector<double> c(d * d);
  // sigma'(0) = 1/4.
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.25 * static_cast<double>(gram[i]) / static_cast<double>(n);
  return c;
}

namespace {

// Lower Cholesky factor of h + ridge I, raising the ridge until it succeeds.
std::vector<double> cholesky(const std::vector<double>& h, std::size_t d, double ridge) {
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += h[i * d + i];
  double jitter = 0.0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    std::vector<double> l(d * d, 0.0);
    bool ok = true;
    for (std::size_t j = 0; j < d && ok; ++j) {
      double diag = h[j * d + j] + ridge + jitter;
      for (std::size_t k = 0; k < j; ++k) diag -= l[j * d + k] * l[j * d + k];
      if (!(diag > 0.0)) {
        ok = false;
        break;
      }
      l[j * d + j] = std::sqrt(diag);
      for (std::size_t i = j + 1; i < d; ++i) {
        double v = h[i * d + j];
        for (std::size_t k = 0; k < j; ++k) v -= l[i * d + k] * l[j * d + k];
        l[i * d + j] = v / l[j * d + j];
      }
    }
    if (ok) return l;
    jitter = jitter == 0.0 ? 1e-12 * std::max(1.0, trace / static_cast<double>(d)) : jitter * 10.0;
  }
  throw NumericError("few-shot preconditioner is not positive definite");
}

// x = (L L^T)^{-1} b
void cholesky_solve(const std::vector<double>& l, std::size_t d, const std::vector<double>& b, std::vector<double>& x) {
  x = b;
  for (std::size_t i = 0; i < d; ++i) {
    double v = x[i];
    for (std::size_t k = 0; k < i; ++k) v -= l[i * d + k] * x[k];
    x[i] = v / l[i * d + i];
  }
  for (std::size_t i = d; i-- > 0;) {
    double v = x[i];
    for (std::size_t k = i + 1; k < d; ++k) v -= l[k * d + i] * x[k];
    x[i] = v / l[i * d + i];
  }
}

}  // namespace

template <typename T>
FewShotFit fit_logreg(const Tensor<T>& positives, const Tensor<T>& negatives, const FewShotConfig& config,
                      const std::vector<double>* curvature) {
  const auto p = make_problem(positives, negatives, config);
  std::vector<double> own;
  if (!curvature) {
    own = negative_curvature(negatives);
    curvature = &own;
  }
  if (curvature->size() != p.d * p.d) throw DimensionError("curvature matrix does not match the feature width");
  // Limited-memory BFGS whose initial inverse Hessian is the objective's
  // curvature at w = 0 (exact for the negatives and the regulariser).
  const auto l = cholesky(*curvature, p.d, 2.0 * p.reg);

  FewShotFit fit;
  fit.w = p.w0;
  std::vector<double> zp, zn, grad, dir, q, trial(p.d), trial_zp, trial_zn;
  margins(positives, fit.w, zp);
  margins(negatives, fit.w, zn);
  double loss = loss_from_margins(p, fit.w, zp, zn);
  gradient_from_margins(p, fit.w, positives, negatives, zp, zn, grad);

  std::deque<std::vector<double>> hist_s, hist_y;
  std::deque<double> hist_rho;
  std::vector<double> alpha(kHistory);

  while (true) {
    fit.gradient_norm = inf_norm(grad);
    if (fit.gradient_norm < config.tolerance) {
      fit.converged = true;
      break;
    }
    if (fit.iterations >= config.max_iterations) break;
    // Two-loop recursion.
    q = grad;
    for (std::size_t j = hist_s.size(); j-- > 0;) {
      alpha[j] = hist_rho[j] * dot(hist_s[j], q);
      for (std::size_t k = 0; k < p.d; ++k) q[k] -= alpha[j] * hist_y[j][k];
    }
    cholesky_solve(l, p.d, q, dir);
    for (std::size_t j = 0; j < hist_s.size(); ++j) {
      const double beta = hist_rho[j] * dot(hist_y[j], dir);
      for (std::size_t k = 0; k < p.d; ++k) dir[k] += (alpha[j] - beta) * hist_s[j][k];
    }
    double decrease = dot(grad, dir);
    if (!(decrease > 0.0)) {
      // Lost descent; restart from the preconditioned gradient.
      hist_s.clear();
      hist_y.clear();
      hist_rho.clear();
      cholesky_solve(l, p.d, grad, dir);
      decrease = dot(grad, dir);
    }
    bool accepted = false;
    double trial_loss = loss, step = 1.0;
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      for (std::size_t k = 0; k < p.d; ++k) trial[k] = fit.w[k] - step * dir[k];
      margins(positives, trial, trial_zp);
      margins(negatives, trial, trial_zn);
      trial_loss = loss_from_margins(p, trial, trial_zp, trial_zn);
      if (trial_loss <= loss - kArmijo * step * decrease) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no representable decrease left
    std::vector<double> s(p.d), y(p.d);
    for (std::size_t k = 0; k < p.d; ++k) s[k] = trial[k] - fit.w[k];
    fit.w = trial;
    zp.swap(trial_zp);
    zn.swap(trial_zn);
    loss = trial_loss;
    fit.trace.push_back(loss);
    const auto prev_g = grad;
    gradient_from_margins(p, fit.w, positives, negatives, zp, zn, grad);
    ++fit.iterations;
    for (std::size_t k = 0; k < p.d; ++k) y[k] = grad[k] - prev_g[k];
    const double sy = dot(s, y);
    if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
      if (hist_s.size() == kHistory) {
        hist_s.pop_front();
        hist_y.pop_front();
        hist_rho.pop_front();
      }
      hist_s.push_back(std::move(s));
      hist_y.push_back(std::move(y));
      hist_rho.push_back(1.0 / sy);
    }
  }
  fit.objective = loss;
  if (!std::isfinite(loss)) throw NumericError("few-shot objective became non-finite");
  return fit;
}

template double logreg_objective(std::span<const double>, const Tensor<float>&, const Tensor<float>&,
                                 const FewShotConfig&, std::vector<double>*);
template double logreg_objective(std::span<const double>, const Tensor<double>&, const Tensor<double>&,
                                 const FewShotConfig&, std::vector<double>*);
template FewShotFit fit_logreg(const Tensor<float>&, const Tensor<float>&, const FewShotConfig&,
                               const std::vector<double>*);
template FewShotFit fit_logreg(const Tensor<double>&, const Tensor<double>&, const FewShotConfig&,
                               const std::vector<double>*);
template std::vector<double> negative_curvature(const Tensor<float>&);
template std::vector<double> negative_curvature(const Tensor<double>&);

}  // namespace lesinr::fewshot
