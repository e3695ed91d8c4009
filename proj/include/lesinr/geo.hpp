#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lesinr/errors.hpp"

namespace lesinr {

using Rng = std::mt19937_64;

namespace geo {

// Latitude/longitude in degrees. Longitude is wrapped into (-180, 180].
class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat, double lon);

  double lat() const { return lat_; }
  double lon() const { return lon_; }

  bool operator==(const GeoPoint&) const = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

double wrap_longitude(double lon);

struct BoundingBox {
  double lat_min = -90.0;
  double lat_max = 90.0;
  double lon_min = -180.0;
  double lon_max = 180.0;

  static BoundingBox global() { return {}; }
  bool contains(const GeoPoint& p) const;
  bool operator==(const BoundingBox&) const = default;
};

// Equirectangular cell grid. Cell (col, row) with row 0 at the northern edge;
// flat index = row * width + col.
struct Grid {
  std::uint32_t width = 1;
  std::uint32_t height = 1;
  BoundingBox bbox;

  Grid() = default;
  Grid(std::uint32_t w, std::uint32_t h, BoundingBox box);

  std::size_t cell_count() const { return std::size_t{width} * height; }
  double cell_width() const { return (bbox.lon_max - bbox.lon_min) / width; }
  double cell_height() const { return (bbox.lat_max - bbox.lat_min) / height; }
  GeoPoint center(std::uint32_t col, std::uint32_t row) const;
  GeoPoint center(std::size_t index) const { return center(index % width, index / width); }
  // Cell containing p; cells own their western and northern edges, the last
  // column/row also own the eastern/southern bbox edge. nullopt outside bbox.
  std::optional<std::size_t> cell_of(const GeoPoint& p) const;

  bool operator==(const Grid&) const = default;
};

// Row-major, north to south, west to east cell centres.
std::vector<GeoPoint> grid_points(std::uint32_t width, std::uint32_t height, const BoundingBox& bbox);

// Area-uniform point on the sphere. An optional mask rejects and redraws
// (e.g. to restrict to land); it must accept a positive fraction of the sphere.
using LocationMask = std::function<bool(const GeoPoint&)>;
GeoPoint sample_uniform_location(Rng& rng, const LocationMask& mask = {});

// Named raster layers sharing one grid, with per-layer standardisation.
class CovariateStack {
 public:
  struct Layer {
    std::string name;
    double mean = 0.0;
    double stddev = 1.0;
    std::vector<float> values;  // grid.cell_count(), row-major north->south

    bool operator==(const Layer&) const = default;
  };

  static constexpr double kStdFloor = 1e-6;

  CovariateStack() = default;
  // Statistics are computed over finite cells.
  static CovariateStack from_layers(Grid grid, std::vector<std::pair<std::string, std::vector<float>>> layers);

  const Grid& grid() const { return grid_; }
  std::size_t channels() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }

  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static CovariateStack load(const std::filesystem::path& path);
  static CovariateStack deserialize(std::string_view bytes);

  bool operator==(const CovariateStack&) const = default;

 private:
  Grid grid_;
  std::vector<Layer> layers_;
};

struct CovariateSample {
  std::vector<double> values;  // standardised, one per layer
  bool fallback = false;       // some layer was substituted with its mean
};

// Nearest-cell lookup then (value - mean) / std. Outside the stack's bbox or
// on a non-finite cell the layer mean (0 after standardisation) is used.
CovariateSample sample_covariate(const CovariateStack& stack, const GeoPoint& p);

struct PositionInput {
  std::array<double, 4> base{};  // sin/cos of normalised lon, then lat
  std::vector<double> env;
  bool env_fallback = false;

  std::size_t width() const { return 4 + env.size(); }
};

PositionInput encode_position(const GeoPoint& p, const CovariateStack* covariates = nullptr);

}  // namespace geo
}  // namespace lesinr
