#include <algorithm>
#include <cmath>

#include "lesinr/geo.hpp"
#include "lesinr/io/binary.hpp"

namespace lesinr::geo {

namespace {

constexpr std::uint16_t kCovariateVersion = 1;

void put_grid(io::ByteWriter& w, const Grid& g) {
  w.put(g.width);
  w.put(g.height);
  w.put(g.bbox.lat_min);
  w.put(g.bbox.lat_max);
  w.put(g.bbox.lon_min);
  w.put(g.bbox.lon_max);
}

}  // namespace

CovariateStack CovariateStack::from_layers(Grid grid,
                                           std::vector<std::pair<std::string, std::vector<float>>> layers) {
  CovariateStack stack;
  stack.grid_ = grid;
  for (auto& [name, values] : layers) {
    if (values.size() != grid.cell_count()) {
      throw DimensionError("covariate layer '" + name + "' has " + std::to_string(values.size()) +
                           " cells, grid has " + std::to_string(grid.cell_count()));
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (float v : values) {
      if (std::isfinite(v)) {
        sum += v;
        ++n;
      }
    }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    double ss = 0.0;
    for (float v : values) {
      if (std::isfinite(v)) ss += (v - mean) * (v - mean);
    }
    const double sd = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
    stack.layers_.push_back({std::move(name), mean, std::max(sd, kStdFloor), std::move(values)});
  }
  return stack;
}

std::string CovariateStack::serialize() const {
  io::ByteWriter w;
  w.magic("LESC");
  w.put(kCovariateVersion);
  put_grid(w, grid_);
  w.put(static_cast<std::uint16_t>(layers_.size()));
  for (const auto& layer : layers_) {
    w.put_string16(layer.name);
    w.put(layer.mean);
    w.put(layer.stddev);
    w.put_all<float>(layer.values);
  }
  return std::move(w.bytes());
}

CovariateStack CovariateStack::deserialize(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LESC", "covariate stack");
  const auto version_at = r.offset();
  if (auto v = r.get<std::uint16_t>(); v != kCovariateVersion) {
    throw FormatError("unsupported covariate stack version " + std::to_string(v), version_at);
  }
  const auto grid_at = r.offset();
  const auto width = r.get<std::uint32_t>();
  const auto height = r.get<std::uint32_t>();
  BoundingBox box;
  box.lat_min = r.get<double>();
  box.lat_max = r.get<double>();
  box.lon_min = r.get<double>();
  box.lon_max = r.get<double>();
  CovariateStack stack;
  try {
    stack.grid_ = Grid(width, height, box);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid covariate grid: ") + e.what(), grid_at);
  }
  const auto count = r.get<std::uint16_t>();
  for (std::uint16_t i = 0; i < count; ++i) {
    Layer layer;
    layer.name = r.get_string16();
    layer.mean = r.get<double>();
    const auto std_at = r.offset();
    layer.stddev = r.get<double>();
    if (!(layer.stddev > 0.0) || !std::isfinite(layer.mean)) {
      throw FormatError("covariate layer '" + layer.name + "' has invalid statistics", std_at);
    }
    layer.values.resize(stack.grid_.cell_count());
    r.get_all<float>(layer.values);
    stack.layers_.push_back(std::move(layer));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after covariate stack", r.offset());
  return stack;
}

void CovariateStack::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

CovariateStack CovariateStack::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

CovariateSample sample_covariate(const CovariateStack& stack, const GeoPoint& p) {
  CovariateSample out;
  out.values.assign(stack.channels(), 0.0);
  const auto cell = stack.grid().cell_of(p);
  if (!cell) {
    out.fallback = stack.channels() > 0;
    return out;
  }
  for (std::size_t c = 0; c < stack.channels(); ++c) {
    const auto& layer = stack.layers()[c];
    const float v = layer.values[*cell];
    if (!std::isfinite(v)) {
      out.fallback = true;
      continue;
    }
    out.values[c] = (static_cast<double>(v) - layer.mean) / std::max(layer.stddev, CovariateStack::kStdFloor);
  }
  return out;
}

}  // namespace lesinr::geo
