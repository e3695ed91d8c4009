#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lesinr/eval.hpp"
#include "lesinr/io/hash.hpp"

namespace lesinr::eval {

using nlohmann::json;

namespace {

bool is_fewshot(std::string_view c) { return c == condition::kFewShotPrior || c == condition::kFewShotNone; }

const std::set<std::string, std::less<>>& known_conditions() {
  static const std::set<std::string, std::less<>> known{condition::kConstant,     condition::kModelMean,
                                                        condition::kHabitat,      condition::kRange,
                                                        condition::kToken,        condition::kFewShotPrior,
                                                        condition::kFewShotNone};
  return known;
}

Rng fewshot_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

template <typename T>
Tensor<T> feature_rows(const model::Model<T>& model, const std::vector<data::ObservationRecord>& obs,
                       const geo::CovariateStack* covariates) {
  std::vector<geo::GeoPoint> points;
  points.reserve(obs.size());
  for (const auto& o : obs) points.push_back(o.location());
  return point_features(model, points, covariates);
}

}  // namespace

std::vector<EvalTask> make_tasks(const std::vector<std::uint32_t>& species,
                                 const std::map<std::uint32_t, geo::RangeRaster>& truth,
                                 const data::EmbeddingStore* text, const std::vector<data::ObservationRecord>& observations,
                                 std::vector<std::string>* notes) {
  std::vector<EvalTask> tasks;
  for (auto id : species) {
    auto it = truth.find(id);
    if (it == truth.end()) {
      if (notes) notes->push_back("species " + std::to_string(id) + ": no truth mask, skipped");
      continue;
    }
    std::size_t pos = 0, valid = 0;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (!it->second.valid[i]) continue;
      ++valid;
      pos += it->second.values[i] > 0.5f;
    }
    if (pos == 0 || pos == valid) {
      if (notes) notes->push_back("species " + std::to_string(id) + ": mask has no positive or no negative cell, skipped");
      continue;
    }
    EvalTask task;
    task.species_id = id;
    task.truth = it->second;
    if (text) {
      if (auto* r = text->find(id, data::TextKind::habitat_summary)) task.habitat = r->vector;
      if (auto* r = text->find(id, data::TextKind::range_summary)) task.range = r->vector;
    }
    for (const auto& o : observations) {
      if (o.species_id == id) task.observations.push_back(o);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

void BenchmarkConfig::validate() const {
  for (const auto& c : conditions) {
    if (!known_conditions().contains(c)) throw ConfigError("unknown benchmark condition '" + c + "'");
  }
  for (auto n : shots) {
    if (n == 0) throw ConfigError("few-shot counts must be >= 1");
  }
  if (seeds.empty()) throw ConfigError("benchmark needs at least one seed");
  if (fewshot_negatives < 2) throw ConfigError("few-shot fit needs at least 2 negatives");
  if (!(fewshot_lambda >= 0.0)) throw ConfigError("few-shot lambda must be >= 0");
}

std::string BenchmarkConfig::to_json() const {
  return json{{"conditions", conditions},
              {"shots", shots},
              {"seeds", seeds},
              {"fewshot_negatives", fewshot_negatives},
              {"fewshot_lambda", fewshot_lambda},
              {"fewshot_max_iterations", fewshot_max_iterations},
              {"area_weighted", area_weighted}}
      .dump();
}

const ConditionResult* BenchmarkReport::find(std::string_view condition, std::uint32_t shots,
                                             std::uint64_t seed) const {
  for (const auto& r : results) {
    if (r.condition == condition && r.shots == shots && (!is_fewshot(condition) || r.seed == seed)) return &r;
  }
  return nullptr;
}

double BenchmarkReport::mean_map(std::string_view condition, std::uint32_t shots) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (r.condition == condition && r.shots == shots) {
      sum += r.map;
      ++n;
    }
  }
  if (n == 0) throw LookupError("no result for condition " + std::string(condition));
  return sum / static_cast<double>(n);
}

std::string BenchmarkReport::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["checkpoint_hash"] = checkpoint_hash;
  j["notes"] = notes;
  j["results"] = json::array();
  for (const auto& r : results) {
    json ap = json::object();
    for (const auto& [id, v] : r.ap) ap[std::to_string(id)] = v;
    j["results"].push_back({{"condition", r.condition},
                            {"shots", r.shots},
                            {"seed", r.seed},
                            {"map", r.map},
                            {"species", r.ap.size()},
                            {"fits_not_converged", r.fits_not_converged},
                            {"ap", ap}});
  }
  return j.dump(2);
}

std::string BenchmarkReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "condition,shots,seed,species_id,ap\n";
  for (const auto& r : results) {
    for (const auto& [id, v] : r.ap) out << r.condition << ',' << r.shots << ',' << r.seed << ',' << id << ',' << v << '\n';
  }
  return out.str();
}

std::string BenchmarkReport::hash() const { return io::sha256_hex(to_json()); }

template <typename T>
BenchmarkReport run_benchmark(const model::Model<T>& model, const std::vector<EvalTask>& tasks,
                              const BenchmarkConfig& config, const BenchmarkInputs& inputs) {
  config.validate();
  if (tasks.empty()) throw ConfigError("benchmark needs at least one task");
  BenchmarkReport report;
  report.config_hash = io::sha256_hex(config.to_json());
  report.checkpoint_hash = io::sha256_hex(model::serialize_checkpoint(model));
  const geo::Grid grid = tasks.front().truth.grid;
  for (const auto& t : tasks) {
    if (!(t.truth.grid == grid)) throw DimensionError("all task masks must share one grid");
  }
  const auto features = feature_grid(model, grid, inputs.covariates);
  auto ap_of = [&](const geo::RangeRaster& scores, const EvalTask& t) {
    return *average_precision(scores, t.truth, config.area_weighted);
  };
  auto finish = [&](ConditionResult r) {
    if (r.ap.empty()) {
      report.notes.push_back(r.condition + ": no species evaluated");
      return;
    }
    std::vector<double> aps;
    for (const auto& [_, v] : r.ap) aps.push_back(v);
    r.map = mean_average_precision(aps);
    report.results.push_back(std::move(r));
  };

  for (const auto& c : config.conditions) {
    if (is_fewshot(c)) continue;
    ConditionResult r{.condition = c};
    std::optional<geo::RangeRaster> mean;
    if (c == condition::kModelMean) mean = model_mean_raster(model, features);
    for (const auto& t : tasks) {
      if (c == condition::kConstant) {
        r.ap[t.species_id] = ap_of(geo::RangeRaster(grid, 0.5f), t);
      } else if (c == condition::kModelMean) {
        r.ap[t.species_id] = ap_of(*mean, t);
      } else if (c == condition::kToken) {
        if (!model.has_species(t.species_id)) {
          report.notes.push_back("token: species " + std::to_string(t.species_id) + " has no token, skipped");
          continue;
        }
        r.ap[t.species_id] = ap_of(token_raster(model, features, t.species_id), t);
      } else {
        const auto& e = c == condition::kHabitat ? t.habitat : t.range;
        if (!e) {
          report.notes.push_back(c + ": species " + std::to_string(t.species_id) + " has no embedding, skipped");
          continue;
        }
        r.ap[t.species_id] = ap_of(zero_shot_raster(model, features, *e), t);
      }
    }
    finish(std::move(r));
  }

  const bool prior = std::ranges::count(config.conditions, std::string(condition::kFewShotPrior)) > 0;
  const bool none = std::ranges::count(config.conditions, std::string(condition::kFewShotNone)) > 0;
  if (!prior && !none) return report;

  static const std::vector<data::ObservationRecord> kEmpty;
  const auto& train = inputs.train_observations ? *inputs.train_observations : kEmpty;
  // Text-derived species vectors, shared across seeds and shot counts.
  std::map<std::uint32_t, std::vector<double>> priors;
  for (const auto& t : tasks) {
    if (!t.range) continue;
    const auto e = model.text_species_embedding(*t.range);
    priors[t.species_id].assign(e.data().begin(), e.data().end());
  }
  for (auto seed : config.seeds) {
    auto neg_rng = fewshot_rng(seed, 0x6e6567);
    const auto negatives = fewshot::sample_fewshot_negatives(train, config.fewshot_negatives, neg_rng);
    if (negatives.fallback) report.notes.push_back("few-shot negatives: no training observations, all uniform");
    const auto neg_features = point_features(model, negatives.points, inputs.covariates);
    const auto curvature = fewshot::negative_curvature(neg_features);
    for (auto shots : config.shots) {
      ConditionResult with{.condition = condition::kFewShotPrior, .shots = shots, .seed = seed};
      ConditionResult without{.condition = condition::kFewShotNone, .shots = shots, .seed = seed};
      for (const auto& t : tasks) {
        if (t.observations.empty()) {
          report.notes.push_back("few-shot: species " + std::to_string(t.species_id) + " has no observations, skipped");
          continue;
        }
        auto rng = fewshot_rng(seed, 0x706f73, t.species_id, shots);
        std::vector<data::ObservationRecord> picked;
        std::sample(t.observations.begin(), t.observations.end(), std::back_inserter(picked), shots, rng);
        const auto pos_features = feature_rows(model, picked, inputs.covariates);
        fewshot::FewShotConfig fc{.negatives = config.fewshot_negatives,
                                  .lambda = config.fewshot_lambda,
                                  .max_iterations = config.fewshot_max_iterations,
                                  .seed = seed};
        auto run = [&](ConditionResult& r) {
          const auto fit = fewshot::fit_logreg(pos_features, neg_features, fc, &curvature);
          r.fits_not_converged += !fit.converged;
          r.ap[t.species_id] = ap_of(weight_raster(features, fit.w), t);
        };
        if (none) run(without);
        if (prior) {
          auto it = priors.find(t.species_id);
          if (it == priors.end()) {
            report.notes.push_back(std::string(condition::kFewShotPrior) + ": species " +
                                   std::to_string(t.species_id) + " has no range embedding, skipped");
          } else {
            fc.prior = it->second;
            run(with);
          }
        }
      }
      if (prior) finish(std::move(with));
      if (none) finish(std::move(without));
    }
  }
  return report;
}

template BenchmarkReport run_benchmark(const model::Model<float>&, const std::vector<EvalTask>&,
                                       const BenchmarkConfig&, const BenchmarkInputs&);
template BenchmarkReport run_benchmark(const model::Model<double>&, const std::vector<EvalTask>&,
                                       const BenchmarkConfig&, const BenchmarkInputs&);

}  // namespace lesinr::eval
