#include <png.h>

#include <algorithm>
#include <cmath>

#include "lesinr/eval.hpp"
#include "lesinr/io/binary.hpp"

namespace lesinr::eval {

namespace {

// Viridis sampled at t = 0, 0.1, ..., 1.
constexpr std::array<std::array<double, 3>, 11> kViridis{{{68, 1, 84},
                                                          {72, 36, 117},
                                                          {65, 68, 135},
                                                          {53, 95, 141},
                                                          {42, 120, 142},
                                                          {33, 145, 140},
                                                          {34, 168, 132},
                                                          {68, 191, 112},
                                                          {122, 209, 81},
                                                          {189, 223, 38},
                                                          {253, 231, 37}}};

void append(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

}  // namespace

std::array<std::uint8_t, 3> viridis(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double x = t * 10.0;
  const std::size_t k = std::min<std::size_t>(9, static_cast<std::size_t>(x));
  const double f = x - static_cast<double>(k);
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(std::lround(kViridis[k][c] + f * (kViridis[k + 1][c] - kViridis[k][c])));
  }
  return rgb;
}

std::string encode_png(const geo::RangeRaster& raster, float lo, float hi) {
  raster.validate();
  if (!(hi > lo)) throw ConfigError("colormap range needs max > min");
  const std::uint32_t w = raster.grid.width, h = raster.grid.height;
  std::vector<png_byte> pixels(std::size_t{w} * h * 3, 0);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    if (!raster.valid[i]) continue;
    // Quantise to 256 levels first so the colour is a function of the level.
    const double t = std::clamp((static_cast<double>(raster.values[i]) - lo) / (hi - lo), 0.0, 1.0);
    const auto rgb = viridis(std::round(t * 255.0) / 255.0);
    std::copy(rgb.begin(), rgb.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("cannot allocate PNG encoder");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append, nullptr);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t r = 0; r < h; ++r) png_write_row(png, pixels.data() + std::size_t{r} * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const geo::RangeRaster& raster, const std::filesystem::path& path, float lo, float hi) {
  io::write_file_atomic(path, encode_png(raster, lo, hi));
}

}  // namespace lesinr::eval
