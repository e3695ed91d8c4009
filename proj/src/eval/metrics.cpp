#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "lesinr/eval.hpp"

namespace lesinr::eval {

std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                        std::span<const std::uint8_t> valid, std::span<const double> weights) {
  const std::size_t n = scores.size();
  if (labels.size() != n || (!valid.empty() && valid.size() != n) || (!weights.empty() && weights.size() != n)) {
    throw DimensionError("scores, labels, mask and weights must have equal length");
  }
  std::vector<std::size_t> order;
  order.reserve(n);
  double positives = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid.empty() && !valid[i]) continue;
    if (!std::isfinite(scores[i])) throw NumericError("non-finite score at cell " + std::to_string(i));
    const double w = weights.empty() ? 1.0 : weights[i];
    if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("cell weights must be positive and finite");
    order.push_back(i);
    total += w;
    if (labels[i]) positives += w;
  }
  if (positives == 0.0 || positives == total) return std::nullopt;

  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // A single block has constant precision.
  if (scores[order.front()] == scores[order.back()]) return positives / total;

  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  double ap = 0.0, tp_before = 0.0, seen_before = 0.0;
  for (std::size_t begin = 0; begin < order.size();) {
    std::size_t end = begin;
    double block = 0.0, block_pos = 0.0;
    while (end < order.size() && scores[order[end]] == scores[order[begin]]) {
      block += weight(order[end]);
      if (labels[order[end]]) block_pos += weight(order[end]);
      ++end;
    }
    if (block_pos > 0.0) {
      // Positives are spread evenly through the block.
      double cumulative = 0.0;
      for (std::size_t j = begin; j < end; ++j) {
        const double w = weight(order[j]);
        cumulative += w;
        const double precision =
            (tp_before * block + block_pos * cumulative) / ((seen_before + cumulative) * block);
        ap += block_pos * w / block * precision;
      }
    }
    tp_before += block_pos;
    seen_before += block;
    begin = end;
  }
  return std::min(1.0, ap / positives);
}

std::optional<double> average_precision(const geo::RangeRaster& scores, const geo::RangeRaster& truth,
                                        bool area_weighted) {
  if (!(scores.grid == truth.grid)) throw DimensionError("score raster and truth mask use different grids");
  const std::size_t n = truth.size();
  std::vector<double> s(n), w;
  std::vector<std::uint8_t> labels(n), valid(n);
  for (std::size_t i = 0; i < n; ++i) {
    valid[i] = scores.valid[i] && truth.valid[i];
    s[i] = valid[i] ? scores.values[i] : 0.0;
    labels[i] = truth.values[i] > 0.5f;
  }
  if (area_weighted) {
    w.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = std::max(1e-12, std::cos(truth.grid.center(i).lat() * std::numbers::pi / 180.0));
    }
  }
  return average_precision(s, labels, valid, w);
}

double mean_average_precision(std::span<const double> aps) {
  if (aps.empty()) throw ConfigError("MAP of an empty species set");
  double sum = 0.0;
  for (double a : aps) sum += a;
  return sum / static_cast<double>(aps.size());
}

double baseline_constant(const geo::RangeRaster& truth) {
  std::size_t pos = 0, total = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth.valid[i]) continue;
    ++total;
    pos += truth.values[i] > 0.5f;
  }
  if (pos == 0 || pos == total) throw ConfigError("truth mask needs positive and negative cells");
  return static_cast<double>(pos) / static_cast<double>(total);
}

double top_decile_overlap(std::span<const float> scores, std::span<const double> field) {
  const std::size_t n = scores.size();
  if (field.size() != n) throw DimensionError("score and field lengths differ");
  if (n < 10) throw ConfigError("need at least 10 cells for a top-decile overlap");
  auto top = [n](auto values, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    std::vector<std::uint8_t> in(n, 0);
    for (std::size_t i = 0; i < k; ++i) in[idx[i]] = 1;
    return in;
  };
  const std::size_t k = n / 10;
  const auto decile = top(scores, k);
  const auto quartile = top(field, n / 4);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) hit += decile[i] && quartile[i];
  return static_cast<double>(hit) / static_cast<double>(k);
}

}  // namespace lesinr::eval
