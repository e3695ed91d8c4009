#include "lesinr/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "lesinr/io/binary.hpp"

namespace lesinr::data {

using nlohmann::json;

namespace {

constexpr std::uint32_t kFirstSpeciesId = 100;
constexpr std::uint32_t kHabitatSection = 1000;
constexpr std::uint32_t kRangeSection = 1001;
constexpr int kMaxResample = 100;

// Independent stream per generation stage, so changing one stage's draw
// count leaves the others untouched.
Rng stream(std::uint64_t seed, std::uint32_t stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stage};
  return Rng(seq);
}

enum Stage : std::uint32_t { kClimate = 1, kSpecies, kObservations, kTextMap, kText };

std::vector<float> climate_layer(const geo::Grid& grid, std::size_t k, Rng& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.4, 1.0);
  std::uniform_int_distribution<int> lon_freq(0, 2), lat_freq(1, 3);
  struct Wave {
    double a, phi, psi;
    int m, n;
  };
  std::vector<Wave> waves(3);
  for (auto& w : waves) w = {amp(rng), phase(rng), phase(rng), lon_freq(rng), lat_freq(rng)};
  std::vector<float> out(grid.cell_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto p = grid.center(i);
    const double lam = p.lon() * std::numbers::pi / 180.0;
    const double th = p.lat() * std::numbers::pi / 180.0;
    double v = k == 0 ? 2.0 * std::cos(th) : 0.0;  // field 0 is temperature-like
    for (const auto& w : waves) v += w.a * std::sin(w.m * lam + w.phi) * std::cos(w.n * th + w.psi);
    out[i] = static_cast<float>(v);
  }
  return out;
}

std::vector<float> embed(const std::vector<double>& g, std::uint32_t dim, const std::vector<double>& a, double noise,
                         Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<float> v(dim);
  for (std::uint32_t d = 0; d < dim; ++d) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += g[d * a.size() + j] * a[j];
    if (noise > 0.0) s += noise * n(rng);
    v[d] = static_cast<float>(s);
  }
  return v;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<double> text_map(const SyntheticWorldSpec& spec) {
  const std::size_t cols = spec.climate_fields + 1;
  std::vector<double> g(std::size_t{spec.text_dim} * cols);
  Rng rng = stream(spec.seed, kTextMap);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (auto& v : g) v = scale * normal(rng);
  return g;
}

}  // namespace

geo::RangeRaster synthetic_truth(const geo::CovariateStack& climate, const SyntheticSpecies& species) {
  if (species.weights.size() != climate.channels()) {
    throw DimensionError("species has " + std::to_string(species.weights.size()) + " climate weights, world has " +
                         std::to_string(climate.channels()) + " fields");
  }
  geo::RangeRaster truth(climate.grid());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    double v = 0.0;
    for (std::size_t k = 0; k < species.weights.size(); ++k) v += species.weights[k] * standardized_climate(climate, k, i);
    truth.values[i] = v > species.bias ? 1.0f : 0.0f;
  }
  return truth;
}

std::vector<float> synthetic_text_embedding(const SyntheticWorldSpec& spec, const std::vector<double>& a, double noise,
                                            Rng& rng) {
  if (a.size() != spec.climate_fields + 1) {
    throw DimensionError("parameter vector has length " + std::to_string(a.size()) + ", expected " +
                         std::to_string(spec.climate_fields + 1));
  }
  return embed(text_map(spec), spec.text_dim, a, noise, rng);
}

void SyntheticWorldSpec::validate() const {
  if (grid_width == 0 || grid_height == 0) throw ConfigError("synthetic grid must be at least 1x1");
  if (climate_fields == 0) throw ConfigError("synthetic world needs at least one climate field");
  if (train_species == 0 || held_out_species == 0) throw ConfigError("species counts must be at least 1");
  if (min_observations == 0 || min_observations > max_observations) {
    throw ConfigError("need 1 <= min_observations <= max_observations");
  }
  if (!(prevalence_min > 0.0 && prevalence_min <= prevalence_max && prevalence_max < 1.0)) {
    throw ConfigError("need 0 < prevalence_min <= prevalence_max < 1");
  }
  if (!(sharpness > 0.0)) throw ConfigError("sharpness must be positive");
  if (section_noise < 0.0 || range_noise < 0.0 || habitat_noise < 0.0 || description_error < 0.0) {
    throw ConfigError("noise levels must be >= 0");
  }
  if (text_dim == 0 || sections_per_species == 0) throw ConfigError("text_dim and sections_per_species must be >= 1");
  if (habitat_fields > climate_fields) throw ConfigError("habitat_fields exceeds climate_fields");
  if (species_without_text >= train_species) throw ConfigError("at least one training species needs text");
}

std::string SyntheticWorldSpec::to_json() const {
  json j{{"grid_width", grid_width},
         {"grid_height", grid_height},
         {"climate_fields", climate_fields},
         {"train_species", train_species},
         {"held_out_species", held_out_species},
         {"min_observations", min_observations},
         {"max_observations", max_observations},
         {"sharpness", sharpness},
         {"prevalence_min", prevalence_min},
         {"prevalence_max", prevalence_max},
         {"shared_preference", shared_preference},
         {"text_dim", text_dim},
         {"sections_per_species", sections_per_species},
         {"section_noise", section_noise},
         {"range_noise", range_noise},
         {"habitat_noise", habitat_noise},
         {"habitat_fields", habitat_fields},
         {"description_error", description_error},
         {"species_without_text", species_without_text},
         {"seed", seed}};
  return j.dump(2);
}

SyntheticWorldSpec SyntheticWorldSpec::from_json(std::string_view text) {
  SyntheticWorldSpec s;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("grid_width", s.grid_width);
    get("grid_height", s.grid_height);
    get("climate_fields", s.climate_fields);
    get("train_species", s.train_species);
    get("held_out_species", s.held_out_species);
    get("min_observations", s.min_observations);
    get("max_observations", s.max_observations);
    get("sharpness", s.sharpness);
    get("prevalence_min", s.prevalence_min);
    get("prevalence_max", s.prevalence_max);
    get("shared_preference", s.shared_preference);
    get("text_dim", s.text_dim);
    get("sections_per_species", s.sections_per_species);
    get("section_noise", s.section_noise);
    get("range_noise", s.range_noise);
    get("habitat_noise", s.habitat_noise);
    get("habitat_fields", s.habitat_fields);
    get("description_error", s.description_error);
    get("species_without_text", s.species_without_text);
    get("seed", s.seed);
    for (const auto& [key, _] : j.items()) {
      if (!json::parse(s.to_json()).contains(key)) throw ConfigError("unknown synthetic spec key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<double> SyntheticSpecies::parameters() const {
  auto a = weights;
  a.push_back(bias);
  return a;
}

std::vector<std::uint32_t> SyntheticWorld::held_out_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& s : species) {
    if (s.held_out) ids.push_back(s.id);
  }
  return ids;
}

std::vector<std::uint32_t> SyntheticWorld::train_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& s : species) {
    if (!s.held_out) ids.push_back(s.id);
  }
  return ids;
}

const SyntheticSpecies& SyntheticWorld::find(std::uint32_t id) const {
  for (const auto& s : species) {
    if (s.id == id) return s;
  }
  throw LookupError("synthetic world has no species " + std::to_string(id));
}

double standardized_climate(const geo::CovariateStack& climate, std::size_t field, std::size_t cell) {
  const auto& layer = climate.layers().at(field);
  return (static_cast<double>(layer.values.at(cell)) - layer.mean) / layer.stddev;
}

SyntheticWorld generate_synthetic_world(const SyntheticWorldSpec& spec) {
  spec.validate();
  SyntheticWorld world;
  world.spec = spec;
  const std::size_t K = spec.climate_fields;
  const geo::Grid grid(spec.grid_width, spec.grid_height, geo::BoundingBox::global());
  const std::size_t cells = grid.cell_count();

  {
    Rng rng = stream(spec.seed, kClimate);
    std::vector<std::pair<std::string, std::vector<float>>> layers;
    for (std::size_t k = 0; k < K; ++k) layers.emplace_back("climate_" + std::to_string(k), climate_layer(grid, k, rng));
    world.climate = geo::CovariateStack::from_layers(grid, std::move(layers));
  }
  std::vector<double> z(cells * K);
  for (std::size_t i = 0; i < cells; ++i) {
    for (std::size_t k = 0; k < K; ++k) z[i * K + k] = standardized_climate(world.climate, k, i);
  }

  Rng species_rng = stream(spec.seed, kSpecies);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> prevalence(spec.prevalence_min, spec.prevalence_max);
  const std::uint32_t total = spec.train_species + spec.held_out_species;
  std::vector<double> scores(cells), sorted(cells);
  for (std::uint32_t s = 0; s < total; ++s) {
    SyntheticSpecies sp;
    sp.id = kFirstSpeciesId + s;
    sp.held_out = s >= spec.train_species;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxResample) throw ConfigError("synthetic spec cannot produce a species with a valid range");
      sp.weights.assign(K, 0.0);
      double norm = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        sp.weights[k] = normal(species_rng) + (k == 0 ? spec.shared_preference : 0.0);
        norm += sp.weights[k] * sp.weights[k];
      }
      norm = std::sqrt(norm);
      for (auto& w : sp.weights) w /= norm;
      for (std::size_t i = 0; i < cells; ++i) {
        double v = 0.0;
        for (std::size_t k = 0; k < K; ++k) v += sp.weights[k] * z[i * K + k];
        scores[i] = v;
      }
      sorted = scores;
      std::sort(sorted.begin(), sorted.end());
      const double target = prevalence(species_rng);
      const auto q = std::min(cells - 1, static_cast<std::size_t>((1.0 - target) * static_cast<double>(cells)));
      sp.bias = sorted[q];
      const auto positives = std::count_if(scores.begin(), scores.end(), [&](double v) { return v > sp.bias; });
      if (positives > 0 && static_cast<std::size_t>(positives) < cells) {
        sp.prevalence = static_cast<double>(positives) / static_cast<double>(cells);
        break;
      }
      world.log.push_back("species " + std::to_string(sp.id) + " resampled: degenerate range");
    }
    world.truth.emplace(sp.id, synthetic_truth(world.climate, sp));
    world.species.push_back(std::move(sp));
  }

  {
    Rng rng = stream(spec.seed, kObservations);
    std::uniform_int_distribution<std::uint32_t> count(spec.min_observations, spec.max_observations);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    std::vector<double> weight(cells);
    for (const auto& sp : world.species) {
      for (std::size_t i = 0; i < cells; ++i) {
        double v = 0.0;
        for (std::size_t k = 0; k < K; ++k) v += sp.weights[k] * z[i * K + k];
        weight[i] = sigmoid(spec.sharpness * (v - sp.bias)) * std::cos(grid.center(i).lat() * std::numbers::pi / 180.0);
      }
      std::discrete_distribution<std::size_t> cell(weight.begin(), weight.end());
      const auto n = count(rng);
      for (std::uint32_t t = 0; t < n; ++t) {
        const auto c = grid.center(cell(rng));
        const double lat = std::clamp(c.lat() + jitter(rng) * grid.cell_height(), -90.0, 90.0);
        const double lon = c.lon() + jitter(rng) * grid.cell_width();
        world.observations.push_back(make_observation(sp.id, geo::GeoPoint(lat, lon)));
      }
    }
  }

  const auto g = text_map(spec);
  {
    Rng rng = stream(spec.seed, kText);
    std::vector<TextEmbeddingRecord> records;
    for (std::uint32_t s = 0; s < total; ++s) {
      const auto& sp = world.species[s];
      const bool silent = !sp.held_out && s >= spec.train_species - spec.species_without_text;
      if (silent) continue;
      const auto a = sp.parameters();
      // Each record describes the species with its own error in parameter
      // space; only the observations see the exact response.
      auto described = [&](std::vector<double> v, std::size_t n) {
        std::normal_distribution<double> err(0.0, 1.0);
        if (spec.description_error > 0.0) {
          for (std::size_t k = 0; k < n; ++k) v[k] += spec.description_error * err(rng);
        }
        return v;
      };
      for (std::uint32_t sec = 0; sec < spec.sections_per_species; ++sec) {
        const auto d = described(a, K + 1);
        records.push_back({sp.id, sec, TextKind::section, embed(g, spec.text_dim, d, spec.section_noise, rng)});
      }
      std::vector<double> habitat(K + 1, 0.0);
      std::copy_n(sp.weights.begin(), spec.habitat_fields, habitat.begin());
      habitat = described(habitat, spec.habitat_fields);
      records.push_back(
          {sp.id, kHabitatSection, TextKind::habitat_summary, embed(g, spec.text_dim, habitat, spec.habitat_noise, rng)});
      const auto range = described(a, K + 1);
      records.push_back(
          {sp.id, kRangeSection, TextKind::range_summary, embed(g, spec.text_dim, range, spec.range_noise, rng)});
    }
    world.embeddings = EmbeddingStore(spec.text_dim, std::move(records));

    std::vector<TextEmbeddingRecord> concepts;
    for (std::uint32_t k = 0; k < K; ++k) {
      // The species occupying exactly the top quartile of field k.
      std::vector<double> z(world.climate.grid().cell_count());
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = standardized_climate(world.climate, k, i);
      const auto q = z.begin() + static_cast<std::ptrdiff_t>(z.size() * 3 / 4);
      std::nth_element(z.begin(), q, z.end());
      std::vector<double> e(K + 1, 0.0);
      e[k] = 1.0;
      e[K] = *q;
      concepts.push_back({k, 0, TextKind::section, embed(g, spec.text_dim, e, 0.0, rng)});
    }
    world.concepts = EmbeddingStore(spec.text_dim, std::move(concepts));
  }
  return world;
}

void SyntheticWorld::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "truth");
  json j;
  j["format"] = "lesinr-synthetic-world";
  j["spec"] = json::parse(spec.to_json());
  j["species"] = json::array();
  for (const auto& s : species) {
    j["species"].push_back(
        {{"id", s.id}, {"weights", s.weights}, {"bias", s.bias}, {"held_out", s.held_out}, {"prevalence", s.prevalence}});
  }
  j["log"] = log;
  io::write_file_atomic(dir / "world.json", j.dump(2) + "\n");
  write_observations(dir / "observations.leso", observations);
  write_observations(dir / "observations.csv", observations);
  embeddings.save(dir / "embeddings.lese");
  concepts.save(dir / "concepts.lese");
  climate.save(dir / "covariates.lesc");
  for (const auto& [id, r] : truth) r.save(dir / "truth" / (std::to_string(id) + ".lesr"));
}

SyntheticWorld SyntheticWorld::load(const std::filesystem::path& dir) {
  SyntheticWorld w;
  try {
    const auto j = json::parse(io::read_file(dir / "world.json"));
    w.spec = SyntheticWorldSpec::from_json(j.at("spec").dump());
    for (const auto& s : j.at("species")) {
      SyntheticSpecies sp;
      sp.id = s.at("id").get<std::uint32_t>();
      sp.weights = s.at("weights").get<std::vector<double>>();
      sp.bias = s.at("bias").get<double>();
      sp.held_out = s.at("held_out").get<bool>();
      sp.prevalence = s.at("prevalence").get<double>();
      w.species.push_back(std::move(sp));
    }
    w.log = j.at("log").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid world.json: ") + e.what());
  }
  w.observations = read_observations(dir / "observations.leso");
  w.embeddings = EmbeddingStore::load(dir / "embeddings.lese");
  w.concepts = EmbeddingStore::load(dir / "concepts.lese");
  w.climate = geo::CovariateStack::load(dir / "covariates.lesc");
  for (const auto& s : w.species) {
    w.truth.emplace(s.id, geo::RangeRaster::load(dir / "truth" / (std::to_string(s.id) + ".lesr")));
  }
  return w;
}

}  // namespace lesinr::data
