#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesinr/data/embeddings.hpp"
#include "lesinr/data/synthetic.hpp"
#include "lesinr/data/observations.hpp"
#include "lesinr/fewshot.hpp"
#include "lesinr/model.hpp"
#include "lesinr/raster.hpp"

namespace lesinr::eval {

using numkit::Tensor;

// Average precision over valid cells (empty `valid` = all valid). Cells with
// equal scores form one block; inside a block precision is interpolated
// linearly from the block's start to its end, so a constant score field
// scores exactly its prevalence. Optional per-cell weights (e.g. cell area)
// replace counts. nullopt without at least one positive and one negative.
std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                        std::span<const std::uint8_t> valid = {},
                                        std::span<const double> weights = {});
std::optional<double> average_precision(const geo::RangeRaster& scores, const geo::RangeRaster& truth,
                                        bool area_weighted = false);

// Mean of the values, accumulated in the given order.
double mean_average_precision(std::span<const double> aps);

// Location features of every cell centre of a grid, computed once per model.
template <typename T>
struct FeatureGrid {
  geo::Grid grid;
  Tensor<T> features;  // [cells, D]
};

template <typename T>
FeatureGrid<T> feature_grid(const model::Model<T>& model, const geo::Grid& grid,
                            const geo::CovariateStack* covariates = nullptr);

// Features at arbitrary points.
template <typename T>
Tensor<T> point_features(const model::Model<T>& model, std::span<const geo::GeoPoint> points,
                         const geo::CovariateStack* covariates = nullptr);

// Raw inner product f(x) . g(e) per cell.
template <typename T>
geo::RangeRaster ground_text_raster(const model::Model<T>& model, const FeatureGrid<T>& grid,
                                    std::span<const float> embedding);
// sigmoid of ground_text_raster, cell by cell in f32. Never touches tokens.
template <typename T>
geo::RangeRaster zero_shot_raster(const model::Model<T>& model, const FeatureGrid<T>& grid,
                                  std::span<const float> embedding);
// sigmoid(f(x) . E_y) for a training species.
template <typename T>
geo::RangeRaster token_raster(const model::Model<T>& model, const FeatureGrid<T>& grid, std::uint32_t species_id);
// Mean over all training species of their token rasters.
template <typename T>
geo::RangeRaster model_mean_raster(const model::Model<T>& model, const FeatureGrid<T>& grid);
// sigmoid(f(x) . w) for an arbitrary species vector.
template <typename T>
geo::RangeRaster weight_raster(const FeatureGrid<T>& grid, std::span<const double> w);

geo::RangeRaster sigmoid_raster(const geo::RangeRaster& logits);

// AP of the constant score field: the prevalence of the task's mask.
double baseline_constant(const geo::RangeRaster& truth);

struct EvalTask {
  std::uint32_t species_id = 0;
  geo::RangeRaster truth;  // binary mask, >= 1 positive and >= 1 negative valid cell
  std::optional<std::vector<float>> habitat{};
  std::optional<std::vector<float>> range{};
  std::vector<data::ObservationRecord> observations{};  // few-shot positives are drawn from these
};

// Tasks for the given species from truth masks, a text store and held-out
// observations. Species whose mask lacks positives or negatives are skipped
// and named in `notes`.
std::vector<EvalTask> make_tasks(const std::vector<std::uint32_t>& species,
                                 const std::map<std::uint32_t, geo::RangeRaster>& truth,
                                 const data::EmbeddingStore* text, const std::vector<data::ObservationRecord>& observations,
                                 std::vector<std::string>* notes = nullptr);

namespace condition {
inline constexpr const char* kConstant = "constant";
inline constexpr const char* kModelMean = "model_mean";
inline constexpr const char* kHabitat = "zeroshot_habitat";
inline constexpr const char* kRange = "zeroshot_range";
inline constexpr const char* kToken = "token";
inline constexpr const char* kFewShotPrior = "fewshot_range_prior";
inline constexpr const char* kFewShotNone = "fewshot_no_prior";
}  // namespace condition

struct BenchmarkConfig {
  std::vector<std::string> conditions{condition::kConstant, condition::kModelMean, condition::kHabitat,
                                      condition::kRange, condition::kToken};
  std::vector<std::uint32_t> shots{1, 2, 5, 10, 20, 50, 100};
  std::vector<std::uint64_t> seeds{0};  // few-shot sampling seeds
  std::uint32_t fewshot_negatives = 20000;
  double fewshot_lambda = 20.0;
  std::uint32_t fewshot_max_iterations = 500;
  bool area_weighted = false;

  void validate() const;
  std::string to_json() const;
};

struct ConditionResult {
  std::string condition;
  std::uint32_t shots = 0;  // 0 outside few-shot conditions
  std::uint64_t seed = 0;
  std::map<std::uint32_t, double> ap{};  // per species
  double map = 0.0;                       // mean of `ap` in species order
  std::uint32_t fits_not_converged = 0;
};

struct BenchmarkReport {
  std::vector<ConditionResult> results;
  std::vector<std::string> notes;
  std::string config_hash;      // sha256 of the benchmark config JSON
  std::string checkpoint_hash;  // sha256 of the serialized model

  // First result matching condition (and shots), or nullptr.
  const ConditionResult* find(std::string_view condition, std::uint32_t shots = 0, std::uint64_t seed = 0) const;
  // Mean over seeds of the MAP of a few-shot condition.
  double mean_map(std::string_view condition, std::uint32_t shots) const;

  std::string to_json() const;
  // condition,shots,seed,species_id,ap
  std::string to_csv() const;
  // sha256 of to_json().
  std::string hash() const;
};

struct BenchmarkInputs {
  const std::vector<data::ObservationRecord>* train_observations = nullptr;  // few-shot negatives
  const geo::CovariateStack* covariates = nullptr;
};

template <typename T>
BenchmarkReport run_benchmark(const model::Model<T>& model, const std::vector<EvalTask>& tasks,
                              const BenchmarkConfig& config, const BenchmarkInputs& inputs = {});

// Fraction of the top-decile cells of `scores` that lie in the top quartile
// of `field`. Ties at a cut-off are broken by cell index.
double top_decile_overlap(std::span<const float> scores, std::span<const double> field);

// Held-out/train split of a synthetic world under the default observation cap.
data::ObservationSplit split_world(const data::SyntheticWorld& world, std::uint64_t seed = 0);

// Tasks for a synthetic world: its held-out species (few-shot positives from
// `split.held_out`) or, with `seen`, its training species.
std::vector<EvalTask> world_tasks(const data::SyntheticWorld& world, const data::ObservationSplit& split, bool seen,
                                  std::vector<std::string>* notes = nullptr);

// top_decile_overlap of the grounding raster of each concept query against
// its standardised climate field, keyed by field index.
template <typename T>
std::map<std::uint32_t, double> grounding_overlaps(const model::Model<T>& model, const data::SyntheticWorld& world);

// 8-bit RGB PNG with a viridis colormap; values are clamped to [lo, hi] and
// invalid cells are drawn black.
std::string encode_png(const geo::RangeRaster& raster, float lo, float hi);
void write_png(const geo::RangeRaster& raster, const std::filesystem::path& path, float lo, float hi);
// Viridis colour of t in [0, 1].
std::array<std::uint8_t, 3> viridis(double t);

}  // namespace lesinr::eval
