#include "lesinr/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lesinr::geo {

double wrap_longitude(double lon) {
  if (!std::isfinite(lon)) throw ConfigError("non-finite longitude");
  if (lon > -180.0 && lon <= 180.0) return lon;
  double w = std::fmod(lon, 360.0);
  if (w > 180.0) w -= 360.0;
  if (w <= -180.0) w += 360.0;
  return w;
}

GeoPoint::GeoPoint(double lat, double lon) {
  if (!std::isfinite(lat) || lat < -90.0 || lat > 90.0) {
    throw ConfigError("latitude out of range [-90, 90]: " + std::to_string(lat));
  }
  lat_ = lat;
  lon_ = wrap_longitude(lon);
}

bool BoundingBox::contains(const GeoPoint& p) const {
  return p.lat() >= lat_min && p.lat() <= lat_max && p.lon() >= lon_min && p.lon() <= lon_max;
}

Grid::Grid(std::uint32_t w, std::uint32_t h, BoundingBox box) : width(w), height(h), bbox(box) {
  if (w == 0 || h == 0) throw ConfigError("grid extents must be >= 1");
  if (!(box.lat_max > box.lat_min) || !(box.lon_max > box.lon_min) || box.lat_min < -90.0 ||
      box.lat_max > 90.0) {
    throw ConfigError("degenerate bounding box");
  }
}

GeoPoint Grid::center(std::uint32_t col, std::uint32_t row) const {
  const double lat = bbox.lat_max - (row + 0.5) * cell_height();
  const double lon = bbox.lon_min + (col + 0.5) * cell_width();
  return GeoPoint(lat, lon);
}

std::optional<std::size_t> Grid::cell_of(const GeoPoint& p) const {
  if (!bbox.contains(p)) return std::nullopt;
  auto col = static_cast<std::int64_t>(std::floor((p.lon() - bbox.lon_min) / cell_width()));
  auto row = static_cast<std::int64_t>(std::floor((bbox.lat_max - p.lat()) / cell_height()));
  col = std::clamp<std::int64_t>(col, 0, width - 1);
  row = std::clamp<std::int64_t>(row, 0, height - 1);
  return static_cast<std::size_t>(row) * width + static_cast<std::size_t>(col);
}

std::vector<GeoPoint> grid_points(std::uint32_t width, std::uint32_t height, const BoundingBox& bbox) {
  const Grid grid(width, height, bbox);
  std::vector<GeoPoint> out;
  out.reserve(grid.cell_count());
  for (std::uint32_t row = 0; row < height; ++row) {
    for (std::uint32_t col = 0; col < width; ++col) out.push_back(grid.center(col, row));
  }
  return out;
}

GeoPoint sample_uniform_location(Rng& rng, const LocationMask& mask) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    const double lon = 180.0 - 360.0 * unit(rng);
    const double z = 2.0 * unit(rng) - 1.0;
    const double lat = std::asin(z) * 180.0 / std::numbers::pi;
    GeoPoint p(lat, lon);
    if (!mask || mask(p)) return p;
  }
}

PositionInput encode_position(const GeoPoint& p, const CovariateStack* covariates) {
  constexpr double pi = std::numbers::pi;
  const double x = p.lon() / 180.0;
  const double y = p.lat() / 90.0;
  PositionInput out;
  out.base = {std::sin(pi * x), std::cos(pi * x), std::sin(pi * y), std::cos(pi * y)};
  if (covariates) {
    auto s = sample_covariate(*covariates, p);
    out.env = std::move(s.values);
    out.env_fallback = s.fallback;
  }
  return out;
}

}  // namespace lesinr::geo
