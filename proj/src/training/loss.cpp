#include <algorithm>
#include <cmath>

#include "lesinr/numkit/tape.hpp"
#include "lesinr/training.hpp"

namespace lesinr::training {

void LossWeights::validate() const {
  if (!(lambda_pos > 0.0)) throw ConfigError("lambda_pos must be positive");
  if (negatives < 2) throw ConfigError("need at least M=2 negatives per location");
  if (negatives > species) {
    throw ConfigError("M=" + std::to_string(negatives) + " negatives exceeds S=" + std::to_string(species) +
                      " training species");
  }
}

double sampled_anfull_loss(const LossBatch& batch, const LossWeights& weights) {
  weights.validate();
  const std::size_t m = weights.negatives;
  if (batch.at_observation.size() != m || batch.labels.size() != m || batch.at_random.size() != m) {
    throw DimensionError("loss batch slots must all have length M=" + std::to_string(m));
  }
  if (std::count(batch.labels.begin(), batch.labels.end(), 1) != 1 ||
      std::count(batch.labels.begin(), batch.labels.end(), 0) != static_cast<long>(m) - 1) {
    throw ConfigError("loss batch labels must be one-hot");
  }
  const double lo = numkit::Tape<double>::kProbClamp, hi = 1.0 - lo;
  const double s = weights.species;
  const double neg_scale = (s - 1.0) / (m - 1.0);
  const double rand_scale = s / static_cast<double>(m);
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double y = std::clamp(batch.at_observation[j], lo, hi);
    const double yr = std::clamp(batch.at_random[j], lo, hi);
    total += batch.labels[j] ? weights.lambda_pos * std::log(y) : neg_scale * std::log(1.0 - y);
    total += rand_scale * std::log(1.0 - yr);
  }
  return -total / s;
}

SlateSampler::SlateSampler(std::uint32_t species, std::uint32_t negatives)
    : species_(species), negatives_(negatives), perm_(species) {
  LossWeights{.negatives = negatives, .species = species}.validate();
  for (std::uint32_t i = 0; i < species; ++i) perm_[i] = i;
}

void SlateSampler::draw(std::uint32_t population, std::uint32_t count, Rng& rng, std::vector<std::uint32_t>& out) {
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::uint32_t> pick(k, population - 1);
    const auto j = pick(rng);
    std::swap(perm_[k], perm_[j]);
    undo_.emplace_back(k, j);
    out.push_back(perm_[k]);
  }
}

void SlateSampler::observation_slate(std::uint32_t true_row, Rng& rng, std::vector<std::uint32_t>& out) {
  if (true_row >= species_) throw LookupError("species row " + std::to_string(true_row) + " out of range");
  out.clear();
  undo_.clear();
  std::swap(perm_[true_row], perm_[species_ - 1]);
  undo_.emplace_back(true_row, species_ - 1);
  draw(species_ - 1, negatives_ - 1, rng, out);
  for (auto it = undo_.rbegin(); it != undo_.rend(); ++it) std::swap(perm_[it->first], perm_[it->second]);
}

void SlateSampler::random_slate(Rng& rng, std::vector<std::uint32_t>& out) {
  out.clear();
  undo_.clear();
  draw(species_, negatives_, rng, out);
  for (auto it = undo_.rbegin(); it != undo_.rend(); ++it) std::swap(perm_[it->first], perm_[it->second]);
}

NegativeDraw sample_negatives(const data::ObservationRecord& obs, const std::vector<std::uint32_t>& species_ids,
                              std::uint32_t negatives, Rng& rng) {
  const auto s = static_cast<std::uint32_t>(species_ids.size());
  if (s < negatives) {
    throw ConfigError("M=" + std::to_string(negatives) + " negatives exceeds S=" + std::to_string(s) + " species");
  }
  const auto it = std::find(species_ids.begin(), species_ids.end(), obs.species_id);
  if (it == species_ids.end()) throw LookupError("species " + std::to_string(obs.species_id) + " is not a training species");
  SlateSampler sampler(s, negatives);
  NegativeDraw d;
  d.random_location = geo::sample_uniform_location(rng);
  std::vector<std::uint32_t> rows;
  sampler.observation_slate(static_cast<std::uint32_t>(it - species_ids.begin()), rng, rows);
  for (auto r : rows) d.at_observation.push_back(species_ids[r]);
  sampler.random_slate(rng, rows);
  for (auto r : rows) d.at_random.push_back(species_ids[r]);
  return d;
}

}  // namespace lesinr::training
