#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lesinr/data/embeddings.hpp"
#include "lesinr/data/observations.hpp"
#include "lesinr/raster.hpp"

namespace lesinr::data {

// Desk-scale world: smooth latent climate fields, species whose occupancy is a
// logistic function of a linear climate response, and text embeddings that
// are a fixed linear image of each species' parameters plus noise.
struct SyntheticWorldSpec {
  std::uint32_t grid_width = 96;
  std::uint32_t grid_height = 48;
  std::uint32_t climate_fields = 6;  // K
  std::uint32_t train_species = 60;
  std::uint32_t held_out_species = 12;
  std::uint32_t min_observations = 100;
  std::uint32_t max_observations = 300;
  double sharpness = 6.0;
  double prevalence_min = 0.08;
  double prevalence_max = 0.35;
  // Shared preference for high values of field 0 (a latitudinal richness
  // gradient), so the mean map carries some signal.
  double shared_preference = 1.0;
  std::uint32_t text_dim = 4096;
  std::uint32_t sections_per_species = 4;
  double section_noise = 0.3;
  double range_noise = 0.1;
  double habitat_noise = 0.6;
  // Leading climate fields described by habitat summaries.
  std::uint32_t habitat_fields = 3;
  // Per-record N(0, e^2) error on the described parameters, before the
  // linear map to text space.
  double description_error = 0.1;
  // Training species (counted from the end) that get no text records.
  std::uint32_t species_without_text = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SyntheticWorldSpec from_json(std::string_view text);
  bool operator==(const SyntheticWorldSpec&) const = default;
};

struct SyntheticSpecies {
  std::uint32_t id = 0;
  std::vector<double> weights;  // K climate responses
  double bias = 0.0;            // occupancy > 0.5 iff weights . climate > bias
  bool held_out = false;
  double prevalence = 0.0;

  // The K+1 parameter vector a_s = (weights, bias).
  std::vector<double> parameters() const;
};

struct SyntheticWorld {
  SyntheticWorldSpec spec;
  geo::CovariateStack climate;
  std::vector<SyntheticSpecies> species;
  std::vector<ObservationRecord> observations;  // all species, held-out included
  EmbeddingStore embeddings;
  // One noise-free query per climate field, keyed by field index: the text of
  // a species occupying exactly the top quartile of that field.
  EmbeddingStore concepts;
  std::map<std::uint32_t, geo::RangeRaster> truth;  // binary expert masks
  std::vector<std::string> log;

  std::vector<std::uint32_t> held_out_ids() const;
  std::vector<std::uint32_t> train_ids() const;
  const SyntheticSpecies& find(std::uint32_t id) const;

  // Directory layout: world.json, observations.leso, observations.csv,
  // embeddings.lese, concepts.lese, covariates.lesc, truth/<id>.lesr.
  void save(const std::filesystem::path& dir) const;
  static SyntheticWorld load(const std::filesystem::path& dir);
};

// Standardised climate value of field k at cell i, as the covariate sampler
// would return it at that cell's centre.
double standardized_climate(const geo::CovariateStack& climate, std::size_t field, std::size_t cell);

// Binary mask: 1 where weights . climate > bias.
geo::RangeRaster synthetic_truth(const geo::CovariateStack& climate, const SyntheticSpecies& species);

// Text embedding of a parameter vector a (length K+1) under the world's fixed
// linear map, plus N(0, noise^2) per coordinate drawn from rng.
std::vector<float> synthetic_text_embedding(const SyntheticWorldSpec& spec, const std::vector<double>& a, double noise,
                                            Rng& rng);

// Pure function of the spec (its seed included).
SyntheticWorld generate_synthetic_world(const SyntheticWorldSpec& spec);

}  // namespace lesinr::data
