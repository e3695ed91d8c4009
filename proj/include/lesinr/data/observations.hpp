#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lesinr/geo.hpp"

namespace lesinr::data {

// Coordinates are kept at the f32 precision of the file formats.
struct ObservationRecord {
  std::uint32_t species_id = 0;
  float lat = 0.0f;
  float lon = 0.0f;

  geo::GeoPoint location() const { return {lat, lon}; }
  bool operator==(const ObservationRecord&) const = default;
};

// Builds a record, validating and wrapping the coordinate first.
ObservationRecord make_observation(std::uint32_t species_id, const geo::GeoPoint& p);

// CSV with header `species_id,lat,lon`. Malformed rows raise FormatError
// naming the line.
std::vector<ObservationRecord> parse_observations_csv(std::string_view text);
std::string format_observations_csv(const std::vector<ObservationRecord>& records);

// "LESO" binary file.
std::string serialize_observations(const std::vector<ObservationRecord>& records);
std::vector<ObservationRecord> deserialize_observations(std::string_view bytes);

// Picks the format from the leading magic.
std::vector<ObservationRecord> read_observations(const std::filesystem::path& path);
void write_observations(const std::filesystem::path& path, const std::vector<ObservationRecord>& records);

struct SpeciesCount {
  std::uint64_t before_cap = 0;
  std::uint64_t after_cap = 0;
};

struct DatasetManifest {
  std::uint64_t species_count = 0;      // species in the training split
  std::uint64_t observation_count = 0;  // records in the training split
  std::map<std::uint32_t, SpeciesCount> per_species;
  std::vector<std::uint32_t> held_out;
  std::uint32_t cap = 0;
  std::uint32_t min_count = 0;
  std::vector<std::string> warnings;

  // Sorted training species ids.
  std::vector<std::uint32_t> training_species() const;
  std::string to_json() const;
};

struct LoadOptions {
  std::uint32_t cap = 1000;
  std::uint32_t min_count = 1;
  std::uint64_t seed = 0;
  std::set<std::uint32_t> held_out{};
};

struct ObservationSplit {
  std::vector<ObservationRecord> train;
  std::vector<ObservationRecord> held_out;  // never capped
  DatasetManifest manifest;
};

// Splits off held-out species, drops species under min_count and caps the rest
// with a seeded uniform subsample. Record order within the output follows the
// input order.
ObservationSplit split_observations(const std::vector<ObservationRecord>& records, const LoadOptions& options);
ObservationSplit load_observations(const std::filesystem::path& path, const LoadOptions& options);

}  // namespace lesinr::data
