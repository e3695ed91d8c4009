#include <cmath>

#include "lesinr/eval.hpp"
#include "lesinr/numkit/kernels.hpp"

namespace lesinr::eval {

namespace {

template <typename T>
void check_grid(const model::Model<T>& model, const FeatureGrid<T>& grid) {
  if (grid.features.rows() != grid.grid.cell_count() || grid.features.cols() != model.config().embed_dim) {
    throw DimensionError("feature grid " + numkit::shape_string(grid.features.shape()) + " does not match " +
                         std::to_string(grid.grid.cell_count()) + " cells of width " +
                         std::to_string(model.config().embed_dim));
  }
}

template <typename T, typename F>
geo::RangeRaster dot_raster(const FeatureGrid<T>& grid, std::span<const T> v, F&& transform) {
  geo::RangeRaster out(grid.grid);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values[i] = transform(numkit::kernels::dot<T>(grid.features.row(i), v));
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> point_features(const model::Model<T>& model, std::span<const geo::GeoPoint> points,
                         const geo::CovariateStack* covariates) {
  std::vector<geo::PositionInput> inputs;
  inputs.reserve(points.size());
  for (const auto& p : points) inputs.push_back(geo::encode_position(p, covariates));
  return model.location_features(inputs);
}

template <typename T>
FeatureGrid<T> feature_grid(const model::Model<T>& model, const geo::Grid& grid,
                            const geo::CovariateStack* covariates) {
  std::vector<geo::GeoPoint> centres;
  centres.reserve(grid.cell_count());
  for (std::size_t i = 0; i < grid.cell_count(); ++i) centres.push_back(grid.center(i));
  return {grid, point_features(model, centres, covariates)};
}

template <typename T>
geo::RangeRaster ground_text_raster(const model::Model<T>& model, const FeatureGrid<T>& grid,
                                    std::span<const float> embedding) {
  check_grid(model, grid);
  const auto e = model.text_species_embedding(embedding);
  return dot_raster<T>(grid, e.data(), [](T z) { return static_cast<float>(z); });
}

geo::RangeRaster sigmoid_raster(const geo::RangeRaster& logits) {
  geo::RangeRaster out = logits;
  for (auto& v : out.values) v = model::sigmoid<float>(v);
  return out;
}

template <typename T>
geo::RangeRaster zero_shot_raster(const model::Model<T>& model, const FeatureGrid<T>& grid,
                                  std::span<const float> embedding) {
  return sigmoid_raster(ground_text_raster(model, grid, embedding));
}

template <typename T>
geo::RangeRaster token_raster(const model::Model<T>& model, const FeatureGrid<T>& grid, std::uint32_t species_id) {
  check_grid(model, grid);
  const auto token = model.species_token(species_id);
  return dot_raster<T>(grid, token, [](T z) { return static_cast<float>(model::sigmoid<T>(z)); });
}

template <typename T>
geo::RangeRaster model_mean_raster(const model::Model<T>& model, const FeatureGrid<T>& grid) {
  check_grid(model, grid);
  const std::size_t cells = grid.grid.cell_count(), s = model.species_count(), d = model.config().embed_dim;
  const auto& tokens = model.params().get(model::param_names::kTokens);
  std::vector<T> tokens_t(d * s), logits(cells * s);
  numkit::kernels::transpose<T>(tokens.data(), tokens_t, s, d);
  numkit::kernels::matmul<T>(grid.features.data(), tokens_t, logits, cells, d, s);
  geo::RangeRaster out(grid.grid);
  for (std::size_t i = 0; i < cells; ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < s; ++k) sum += model::sigmoid<double>(logits[i * s + k]);
    out.values[i] = static_cast<float>(sum / static_cast<double>(s));
  }
  return out;
}

template <typename T>
geo::RangeRaster weight_raster(const FeatureGrid<T>& grid, std::span<const double> w) {
  if (w.size() != grid.features.cols()) {
    throw DimensionError("species vector length " + std::to_string(w.size()) + ", features have width " +
                         std::to_string(grid.features.cols()));
  }
  geo::RangeRaster out(grid.grid);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = grid.features.row(i);
    double z = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) z += static_cast<double>(row[k]) * w[k];
    out.values[i] = static_cast<float>(model::sigmoid<double>(z));
  }
  return out;
}

#define LESINR_EVAL_INSTANTIATE(T)                                                                                  \
  template Tensor<T> point_features(const model::Model<T>&, std::span<const geo::GeoPoint>,                       \
                                    const geo::CovariateStack*);                                                   \
  template FeatureGrid<T> feature_grid(const model::Model<T>&, const geo::Grid&, const geo::CovariateStack*);     \
  template geo::RangeRaster ground_text_raster(const model::Model<T>&, const FeatureGrid<T>&,                     \
                                               std::span<const float>);                                            \
  template geo::RangeRaster zero_shot_raster(const model::Model<T>&, const FeatureGrid<T>&, std::span<const float>); \
  template geo::RangeRaster token_raster(const model::Model<T>&, const FeatureGrid<T>&, std::uint32_t);           \
  template geo::RangeRaster model_mean_raster(const model::Model<T>&, const FeatureGrid<T>&);                     \
  template geo::RangeRaster weight_raster(const FeatureGrid<T>&, std::span<const double>);

LESINR_EVAL_INSTANTIATE(float)
LESINR_EVAL_INSTANTIATE(double)

}  // namespace lesinr::eval
