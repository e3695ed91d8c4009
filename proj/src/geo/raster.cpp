#include "lesinr/raster.hpp"

#include <cmath>

#include "lesinr/io/binary.hpp"

namespace lesinr::geo {

namespace {
constexpr std::uint16_t kRasterVersion = 1;
}

void RangeRaster::validate() const {
  if (values.size() != grid.cell_count() || valid.size() != grid.cell_count()) {
    throw DimensionError("raster has " + std::to_string(values.size()) + " values and " +
                         std::to_string(valid.size()) + " mask cells for a " + std::to_string(grid.width) + "x" +
                         std::to_string(grid.height) + " grid");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (valid[i] && !std::isfinite(values[i])) {
      throw NumericError("non-finite raster value at valid cell " + std::to_string(i));
    }
  }
}

std::string RangeRaster::serialize() const {
  validate();
  io::ByteWriter w;
  w.magic("LESR");
  w.put(kRasterVersion);
  w.put(grid.width);
  w.put(grid.height);
  w.put(grid.bbox.lat_min);
  w.put(grid.bbox.lat_max);
  w.put(grid.bbox.lon_min);
  w.put(grid.bbox.lon_max);
  w.put_all<float>(values);
  w.put_all<std::uint8_t>(valid);
  return std::move(w.bytes());
}

RangeRaster RangeRaster::deserialize(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LESR", "raster");
  const auto version_at = r.offset();
  if (auto v = r.get<std::uint16_t>(); v != kRasterVersion) {
    throw FormatError("unsupported raster version " + std::to_string(v), version_at);
  }
  const auto grid_at = r.offset();
  const auto width = r.get<std::uint32_t>();
  const auto height = r.get<std::uint32_t>();
  BoundingBox box;
  box.lat_min = r.get<double>();
  box.lat_max = r.get<double>();
  box.lon_min = r.get<double>();
  box.lon_max = r.get<double>();
  RangeRaster out;
  try {
    out.grid = Grid(width, height, box);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid raster grid: ") + e.what(), grid_at);
  }
  out.values.resize(out.grid.cell_count());
  out.valid.resize(out.grid.cell_count());
  r.get_all<float>(out.values);
  r.get_all<std::uint8_t>(out.valid);
  if (!r.at_end()) throw FormatError("trailing bytes after raster", r.offset());
  return out;
}

void RangeRaster::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

RangeRaster RangeRaster::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

}  // namespace lesinr::geo
