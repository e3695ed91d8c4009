#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lesinr/geo.hpp"
#include "lesinr/raster.hpp"

using namespace lesinr;
using namespace lesinr::geo;

namespace {

void expect_base(const PositionInput& in, std::array<double, 4> expected, double tol) {
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(in.base[i], expected[i], tol) << "feature " << i;
}

}  // namespace

TEST(EncodePosition, Origin) { expect_base(encode_position({0, 0}), {0, 1, 0, 1}, 0.0); }

TEST(EncodePosition, AntimeridianContinuity) {
  expect_base(encode_position({0, 180}), {0, -1, 0, 1}, 1e-12);
  expect_base(encode_position({0, -180 + 1e-9}), {0, -1, 0, 1}, 1e-9);
}

TEST(EncodePosition, StandardAngles) {
  // lon 90 -> pi/2; lat 45 -> 45/90 * pi = pi/2.
  expect_base(encode_position({45, 90}), {1, 0, 1, 0}, 1e-15);
  // lat 22.5 -> pi/4.
  expect_base(encode_position({22.5, -90}), {-1, 0, std::sqrt(0.5), std::sqrt(0.5)}, 1e-15);
}

TEST(EncodePosition, PolesAndEquatorAreDistinct) {
  auto n = encode_position({90, 0});
  auto e = encode_position({0, 0});
  EXPECT_NEAR(n.base[3], -1.0, 1e-15);
  EXPECT_NEAR(e.base[3], 1.0, 1e-15);
}

TEST(EncodePosition, PeriodicInLongitudeAndBounded) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> lon_steps(-180 * 256 + 1, 180 * 256);
  std::uniform_real_distribution<double> lat(-90.0, 90.0);
  for (int i = 0; i < 2000; ++i) {
    const double lo = lon_steps(rng) / 256.0;  // exactly representable after +-360
    const double la = lat(rng);
    auto a = encode_position(GeoPoint(la, lo));
    auto b = encode_position(GeoPoint(la, lo + 360.0));
    auto c = encode_position(GeoPoint(la, lo - 720.0));
    EXPECT_EQ(a.base, b.base);
    EXPECT_EQ(a.base, c.base);
    for (double v : a.base) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(GeoPoint, RejectsLatitudeOutOfRangeAndWraps) {
  EXPECT_THROW(GeoPoint(90.5, 0), ConfigError);
  EXPECT_THROW(GeoPoint(std::nan(""), 0), ConfigError);
  EXPECT_EQ(GeoPoint(0, -180).lon(), 180.0);
  EXPECT_EQ(GeoPoint(0, 540).lon(), 180.0);
  EXPECT_EQ(GeoPoint(0, 190).lon(), -170.0);
}

TEST(SampleUniformLocation, BandAndHemisphereFractions) {
  Rng rng(2024);
  const int n = 1'000'000;
  int tropics = 0, east = 0;
  for (int i = 0; i < n; ++i) {
    auto p = sample_uniform_location(rng);
    tropics += std::abs(p.lat()) < 30.0;
    east += p.lon() > 0.0;
  }
  EXPECT_NEAR(tropics / double(n), 0.5, 0.01);
  EXPECT_NEAR(east / double(n), 0.5, 0.01);
}

TEST(SampleUniformLocation, EqualAreaChiSquare) {
  // 10 bands of equal sin(lat) width x 12 longitude sectors: 120 cells of
  // identical spherical area.
  constexpr int kBands = 10, kSectors = 12;
  constexpr int n = 240'000;
  std::vector<int> counts(kBands * kSectors, 0);
  Rng rng(99);
  for (int i = 0; i < n; ++i) {
    auto p = sample_uniform_location(rng);
    const double z = std::sin(p.lat() * std::numbers::pi / 180.0);
    int band = std::min(kBands - 1, static_cast<int>((z + 1.0) / 2.0 * kBands));
    int sector = std::min(kSectors - 1, static_cast<int>((p.lon() + 180.0) / 360.0 * kSectors));
    ++counts[band * kSectors + sector];
  }
  const double expected = double(n) / counts.size();
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Upper 0.1% point of chi-square with 119 degrees of freedom.
  EXPECT_LT(chi2, 172.4177);
}

TEST(SampleUniformLocation, DeterministicAndMaskable) {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_uniform_location(a), sample_uniform_location(b));
  Rng c(6);
  for (int i = 0; i < 100; ++i) {
    EXPECT_GT(sample_uniform_location(c, [](const GeoPoint& p) { return p.lat() > 0; }).lat(), 0.0);
  }
}

TEST(GridPoints, Examples) {
  auto one = grid_points(1, 1, BoundingBox::global());
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], GeoPoint(0, 0));

  auto two = grid_points(2, 1, BoundingBox::global());
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0], GeoPoint(0, -90));
  EXPECT_EQ(two[1], GeoPoint(0, 90));

  auto full = grid_points(360, 180, BoundingBox::global());
  EXPECT_EQ(full[0], GeoPoint(89.5, -179.5));
}

TEST(GridPoints, CountAndMonotonicity) {
  const std::uint32_t w = 17, h = 9;
  BoundingBox box{.lat_min = -10, .lat_max = 40, .lon_min = 100, .lon_max = 170};
  auto pts = grid_points(w, h, box);
  ASSERT_EQ(pts.size(), std::size_t{w} * h);
  for (std::uint32_t r = 0; r < h; ++r) {
    for (std::uint32_t c = 1; c < w; ++c) EXPECT_GT(pts[r * w + c].lon(), pts[r * w + c - 1].lon());
    if (r > 0) {
      EXPECT_LT(pts[r * w].lat(), pts[(r - 1) * w].lat());
    }
  }
  Grid grid(w, h, box);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(grid.cell_of(pts[i]), i);
}

TEST(GridPoints, DegenerateBoxRejected) {
  EXPECT_THROW(grid_points(2, 2, {.lat_min = 10, .lat_max = 10}), ConfigError);
  EXPECT_THROW(grid_points(0, 2, BoundingBox::global()), ConfigError);
}

namespace {

CovariateStack make_stack() {
  Grid grid(8, 4, BoundingBox::global());
  std::vector<float> ramp(grid.cell_count()), flat(grid.cell_count(), 3.5f);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<float>(i);
  return CovariateStack::from_layers(grid, {{"ramp", ramp}, {"flat", flat}});
}

}  // namespace

TEST(Covariates, ConstantLayerStandardisesToZero) {
  auto stack = make_stack();
  EXPECT_EQ(stack.layers()[1].stddev, CovariateStack::kStdFloor);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    auto s = sample_covariate(stack, sample_uniform_location(rng));
    EXPECT_EQ(s.values[1], 0.0);
  }
}

TEST(Covariates, CellCentreReturnsThatCell) {
  auto stack = make_stack();
  const auto& layer = stack.layers()[0];
  for (std::size_t i = 0; i < stack.grid().cell_count(); ++i) {
    auto s = sample_covariate(stack, stack.grid().center(i));
    EXPECT_DOUBLE_EQ(s.values[0], (layer.values[i] - layer.mean) / layer.stddev);
  }
}

TEST(Covariates, IndexingAgreesWithIndependentArithmetic) {
  // Oracle: cell = floor(rows from north) * W + floor(cols from west), edges
  // clamped. Evaluated on a regional box so the bbox offset matters.
  Grid grid(13, 7, {.lat_min = -30, .lat_max = 40, .lon_min = -20, .lon_max = 110});
  std::vector<float> ids(grid.cell_count());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<float>(i);
  auto stack = CovariateStack::from_layers(grid, {{"id", ids}});
  const auto& layer = stack.layers()[0];
  Rng rng(17);
  std::uniform_real_distribution<double> lat(-30, 40), lon(-20, 110);
  for (int k = 0; k < 100; ++k) {
    GeoPoint p(lat(rng), lon(rng));
    const int col = std::min(12, int((p.lon() + 20.0) / 10.0));
    const int row = std::min(6, int((40.0 - p.lat()) / 10.0));
    const double expected = (row * 13 + col - layer.mean) / layer.stddev;
    EXPECT_DOUBLE_EQ(sample_covariate(stack, p).values[0], expected);
  }
}

TEST(Covariates, FallbacksAreFlagged) {
  Grid grid(2, 2, {.lat_min = 0, .lat_max = 10, .lon_min = 0, .lon_max = 10});
  auto stack = CovariateStack::from_layers(grid, {{"a", {1.0f, NAN, 3.0f, 4.0f}}});
  EXPECT_DOUBLE_EQ(stack.layers()[0].mean, 8.0 / 3.0);
  auto outside = sample_covariate(stack, {50, 50});
  EXPECT_TRUE(outside.fallback);
  EXPECT_EQ(outside.values[0], 0.0);
  auto nan_cell = sample_covariate(stack, {7.5, 7.5});
  EXPECT_TRUE(nan_cell.fallback);
  EXPECT_EQ(nan_cell.values[0], 0.0);
  auto in = encode_position({2.5, 2.5}, &stack);
  EXPECT_EQ(in.width(), 5u);
  EXPECT_FALSE(in.env_fallback);
}

TEST(Covariates, FileRoundtripAndMagicGuard) {
  auto stack = make_stack();
  auto bytes = stack.serialize();
  EXPECT_EQ(bytes.substr(0, 4), "LESC");
  EXPECT_EQ(CovariateStack::deserialize(bytes), stack);
  EXPECT_EQ(CovariateStack::deserialize(bytes).serialize(), bytes);
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(CovariateStack::deserialize(bad), FormatError);
  EXPECT_THROW(CovariateStack::deserialize(bytes.substr(0, bytes.size() - 3)), FormatError);
}

TEST(Raster, FileRoundtripAndGuards) {
  RangeRaster r(Grid(5, 3, BoundingBox::global()));
  for (std::size_t i = 0; i < r.size(); ++i) r.values[i] = 0.1f * static_cast<float>(i) - 0.3f;
  r.valid[4] = 0;
  r.values[4] = NAN;
  auto bytes = r.serialize();
  auto back = RangeRaster::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.grid, r.grid);
  EXPECT_EQ(back.valid, r.valid);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(RangeRaster::deserialize(bad), FormatError);
  try {
    RangeRaster::deserialize(bytes.substr(0, 20));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  r.valid[4] = 1;
  EXPECT_THROW(r.serialize(), NumericError);
}
