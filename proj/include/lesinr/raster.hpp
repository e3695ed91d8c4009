#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lesinr/geo.hpp"

namespace lesinr::geo {

// Per-cell scores over a Grid plus a validity mask. Row 0 is the northern
// edge. Values are finite wherever valid[i] != 0.
struct RangeRaster {
  Grid grid;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  RangeRaster() = default;
  explicit RangeRaster(Grid g, float fill = 0.0f)
      : grid(g), values(g.cell_count(), fill), valid(g.cell_count(), 1) {}

  std::size_t size() const { return values.size(); }
  // Throws DimensionError/NumericError if the invariants do not hold.
  void validate() const;

  std::string serialize() const;
  static RangeRaster deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static RangeRaster load(const std::filesystem::path& path);

  bool operator==(const RangeRaster&) const = default;
};

}  // namespace lesinr::geo
