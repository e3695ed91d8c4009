#include <gtest/gtest.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lesinr/data/synthetic.hpp"
#include "lesinr/eval.hpp"
#include "support/oracles.hpp"

using namespace lesinr;
using namespace lesinr::eval;
using oracle::textbook_ap;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

Instance random_instance(Rng& rng, std::size_t n, int levels = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> lv(0, std::max(0, levels - 1));
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(levels ? double(lv(rng)) : u(rng));
    in.labels.push_back(u(rng) < 0.3);
  }
  in.labels[0] = 1;
  in.labels[1] = 0;
  return in;
}

model::ModelConfig tiny_model_config(std::vector<std::uint32_t> ids, std::uint32_t text_dim = 16) {
  model::ModelConfig c;
  c.residual_blocks = 1;
  c.embed_dim = 8;
  c.text_dim = text_dim;
  c.text_hidden = 6;
  c.seed = 5;
  c.species_ids = std::move(ids);
  return c;
}

data::SyntheticWorldSpec tiny_world_spec(std::uint64_t seed) {
  data::SyntheticWorldSpec s;
  s.grid_width = 24;
  s.grid_height = 12;
  s.climate_fields = 3;
  s.train_species = 6;
  s.held_out_species = 2;
  s.min_observations = 10;
  s.max_observations = 20;
  s.text_dim = 16;
  s.habitat_fields = 2;
  s.seed = seed;
  return s;
}

std::vector<float> random_text(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(AveragePrecision, PerfectSeparationIsOne) {
  std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  std::vector<std::uint8_t> y{1, 1, 0, 0};
  EXPECT_EQ(*average_precision(s, y), 1.0);
}

TEST(AveragePrecision, ConstantScoresGivePrevalenceExactly) {
  std::vector<double> s(100, 0.42);
  std::vector<std::uint8_t> y(100, 0);
  for (int i = 0; i < 10; ++i) y[i * 7] = 1;
  EXPECT_EQ(*average_precision(s, y), 0.1);
  for (int p : {1, 3, 17, 50, 99}) {
    std::vector<std::uint8_t> z(137, 0);
    std::fill_n(z.begin(), p, 1);
    std::vector<double> c(137, -3.0);
    EXPECT_EQ(*average_precision(c, z), double(p) / 137.0) << p;
  }
}

TEST(AveragePrecision, MatchesQuadraticReference) {
  Rng rng(77);
  std::uniform_int_distribution<std::size_t> size(2, 200);
  for (int k = 0; k < 50; ++k) {
    auto in = random_instance(rng, size(rng));
    EXPECT_NEAR(*average_precision(in.scores, in.labels), textbook_ap(in.scores, in.labels), 1e-12) << "instance " << k;
  }
}

TEST(AveragePrecision, UndefinedWithoutBothClasses) {
  std::vector<double> s{0.1, 0.2};
  EXPECT_FALSE(average_precision(s, std::vector<std::uint8_t>{0, 0}).has_value());
  EXPECT_FALSE(average_precision(s, std::vector<std::uint8_t>{1, 1}).has_value());
  // Valid mask removes the only negative.
  EXPECT_FALSE(average_precision(s, std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{1, 0}).has_value());
}

TEST(AveragePrecision, InputGuards) {
  std::vector<double> s{0.1, NAN};
  std::vector<std::uint8_t> y{1, 0};
  EXPECT_THROW(average_precision(s, y), NumericError);
  // Invalid cells may hold anything.
  std::vector<double> s3{0.1, NAN, 0.05};
  EXPECT_EQ(*average_precision(s3, std::vector<std::uint8_t>{1, 0, 0}, std::vector<std::uint8_t>{1, 0, 1}), 1.0);
  EXPECT_THROW(average_precision(s, std::vector<std::uint8_t>{1}), DimensionError);
}

TEST(AveragePrecision, InvariantUnderIncreasingTransforms) {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    auto in = random_instance(rng, 150, 12);
    auto t = in.scores;
    for (auto& v : t) v = std::exp(3.0 * v) - 7.0;
    EXPECT_EQ(*average_precision(in.scores, in.labels), *average_precision(t, in.labels));
  }
}

TEST(AveragePrecision, TieBlocksLieWithinTieBreakExtremes) {
  // Interpolating inside a block can never leave the range spanned by the
  // best (positives first) and worst (positives last) tie-breaks.
  Rng rng(9);
  for (int k = 0; k < 30; ++k) {
    auto in = random_instance(rng, 80, 6);
    std::vector<double> best = in.scores, worst = in.scores;
    for (std::size_t i = 0; i < best.size(); ++i) {
      best[i] += in.labels[i] ? 0.25 : 0.0;
      worst[i] += in.labels[i] ? 0.0 : 0.25;
    }
    const double ap = *average_precision(in.scores, in.labels);
    EXPECT_LE(ap, *average_precision(best, in.labels) + 1e-15);
    EXPECT_GE(ap, *average_precision(worst, in.labels) - 1e-15);
  }
}

TEST(AveragePrecision, UnitWeightsMatchCounts) {
  Rng rng(4);
  for (int k = 0; k < 10; ++k) {
    auto in = random_instance(rng, 60, 5);
    std::vector<double> ones(60, 1.0), twos(60, 2.0);
    const double ap = *average_precision(in.scores, in.labels);
    EXPECT_NEAR(*average_precision(in.scores, in.labels, {}, ones), ap, 1e-15);
    EXPECT_NEAR(*average_precision(in.scores, in.labels, {}, twos), ap, 1e-15);
  }
}

TEST(MeanAveragePrecision, OrderInvariantAndExactMean) {
  std::vector<double> aps{0.5, 0.25, 0.125, 1.0};
  EXPECT_EQ(mean_average_precision(aps), 0.46875);
  std::vector<double> rev(aps.rbegin(), aps.rend());
  EXPECT_EQ(mean_average_precision(rev), 0.46875);
  EXPECT_THROW(mean_average_precision({}), ConfigError);
}

TEST(BaselineConstant, EqualsPrevalenceAndConstantFieldAp) {
  geo::Grid grid(10, 10, geo::BoundingBox::global());
  geo::RangeRaster truth(grid, 0.0f);
  truth.values[37] = 1.0f;
  EXPECT_EQ(baseline_constant(truth), 0.01);
  EXPECT_EQ(*average_precision(geo::RangeRaster(grid, 0.3f), truth), 0.01);
  std::fill_n(truth.values.begin(), 50, 1.0f);
  EXPECT_EQ(baseline_constant(truth), 0.5);
  EXPECT_EQ(*average_precision(geo::RangeRaster(grid, 0.3f), truth), 0.5);
}

TEST(RasterAp, RespectsMasksOfBothRasters) {
  geo::Grid grid(4, 2, geo::BoundingBox::global());
  geo::RangeRaster truth(grid, 0.0f), scores(grid, 0.0f);
  truth.values = {1, 0, 1, 0, 0, 0, 0, 1};
  scores.values = {0.9f, 0.1f, 0.8f, 0.95f, 0.2f, 0.3f, 0.1f, 0.7f};
  // Cell 3 (a high-scoring negative) is masked out.
  truth.valid[3] = 0;
  EXPECT_EQ(*average_precision(scores, truth), 1.0);
  truth.valid[3] = 1;
  scores.valid[3] = 0;
  scores.values[3] = NAN;
  EXPECT_EQ(*average_precision(scores, truth), 1.0);
  EXPECT_THROW(average_precision(geo::RangeRaster(geo::Grid(2, 2, geo::BoundingBox::global())), truth), DimensionError);
}

TEST(Rasters, GroundingAndZeroShotAreLinked) {
  auto m = model::Model<float>::initialize(tiny_model_config({1, 2, 3}));
  auto fg = feature_grid(m, geo::Grid(12, 6, geo::BoundingBox::global()));
  auto text = random_text(16, 2);
  auto ground = ground_text_raster(m, fg, text);
  auto zs = zero_shot_raster(m, fg, text);
  for (std::size_t i = 0; i < zs.size(); ++i) EXPECT_EQ(model::sigmoid<float>(ground.values[i]), zs.values[i]);
  EXPECT_EQ(zero_shot_raster(m, fg, text), zs);

  auto md = model::Model<double>::initialize(tiny_model_config({1, 2, 3}));
  auto fgd = feature_grid(md, fg.grid);
  auto gd = ground_text_raster(md, fgd, text);
  EXPECT_EQ(sigmoid_raster(gd), zero_shot_raster(md, fgd, text));
}

TEST(Rasters, ZeroEmbeddingThroughZeroBiasHeadIsConstantHalf) {
  auto m = model::Model<double>::initialize(tiny_model_config({1, 2}));
  auto fg = feature_grid(m, geo::Grid(8, 4, geo::BoundingBox::global()));
  std::vector<float> zero(16, 0.0f);
  auto g = ground_text_raster(m, fg, zero);
  auto z = zero_shot_raster(m, fg, zero);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_EQ(g.values[i], 0.0f);
    EXPECT_EQ(z.values[i], 0.5f);
  }
}

TEST(Rasters, GroundingMatchesNaiveInnerProduct) {
  auto m = model::Model<double>::initialize(tiny_model_config({4}));
  const geo::Grid grid(6, 3, geo::BoundingBox::global());
  auto fg = feature_grid(m, grid);
  auto text = random_text(16, 8);
  auto g = ground_text_raster(m, fg, text);
  const auto e = m.text_species_embedding(text);
  for (std::size_t i = 0; i < grid.cell_count(); ++i) {
    std::vector<geo::PositionInput> one{geo::encode_position(grid.center(i))};
    const auto f = m.location_features(one);
    double dot = 0.0;
    for (std::size_t k = 0; k < 8; ++k) dot += f.data()[k] * e.data()[k];
    EXPECT_NEAR(g.values[i], dot, 1e-6 * std::max(1.0, std::abs(dot)));
  }
}

TEST(Rasters, ZeroShotIgnoresTheTokenTable) {
  auto m = model::Model<float>::initialize(tiny_model_config({1, 2, 3}));
  auto fg = feature_grid(m, geo::Grid(8, 4, geo::BoundingBox::global()));
  auto text = random_text(16, 4);
  auto before = zero_shot_raster(m, fg, text);
  Rng rng(1);
  std::normal_distribution<float> n(0.0f, 5.0f);
  for (auto& v : m.params().get(model::param_names::kTokens).data()) v = n(rng);
  EXPECT_EQ(zero_shot_raster(m, fg, text), before);
}

TEST(Rasters, ModelMeanOfOneSpeciesIsThatSpecies) {
  auto m = model::Model<double>::initialize(tiny_model_config({9}));
  auto fg = feature_grid(m, geo::Grid(8, 4, geo::BoundingBox::global()));
  EXPECT_EQ(model_mean_raster(m, fg), token_raster(m, fg, 9));
  auto many = model::Model<double>::initialize(tiny_model_config({1, 2, 3, 4, 5}));
  auto fg2 = feature_grid(many, fg.grid);
  auto mean = model_mean_raster(many, fg2);
  for (float v : mean.values) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_THROW(token_raster(many, fg2, 77), LookupError);
}

TEST(Rasters, WeightRasterEdgesAndMonotonicity) {
  auto m = model::Model<double>::initialize(tiny_model_config({1}));
  auto fg = feature_grid(m, geo::Grid(8, 4, geo::BoundingBox::global()));
  std::vector<double> w(8, 0.0);
  for (float v : weight_raster(fg, w).values) EXPECT_EQ(v, 0.5f);
  Rng rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : w) v = n(rng);
  const std::size_t star = 13;
  const auto before = weight_raster(fg, w).values[star];
  for (std::size_t k = 0; k < 8; ++k) w[k] += 0.5 * fg.features.at(star, k);
  EXPECT_GE(weight_raster(fg, w).values[star], before);
  EXPECT_THROW(weight_raster(fg, std::vector<double>(7, 0.0)), DimensionError);
}

TEST(TopDecileOverlap, ExtremesAndTies) {
  std::vector<double> field(100);
  std::iota(field.begin(), field.end(), 0.0);
  std::vector<float> same(field.begin(), field.end());
  EXPECT_EQ(top_decile_overlap(same, field), 1.0);
  std::vector<float> reversed(same.rbegin(), same.rend());
  EXPECT_EQ(top_decile_overlap(reversed, field), 0.0);
  EXPECT_THROW(top_decile_overlap(std::vector<float>(5), std::vector<double>(5)), ConfigError);
}

namespace {

std::vector<std::uint8_t> decode_rgb(const std::string& png, std::uint32_t& w, std::uint32_t& h) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  EXPECT_TRUE(png_image_begin_read_from_memory(&image, png.data(), png.size()));
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  EXPECT_TRUE(png_image_finish_read(&image, nullptr, px.data(), 0, nullptr));
  w = image.width;
  h = image.height;
  return px;
}

}  // namespace

TEST(Png, ColormapInvertsToTheBinaryValues) {
  geo::Grid grid(16, 8, geo::BoundingBox::global());
  geo::RangeRaster r(grid);
  Rng rng(6);
  std::uniform_real_distribution<float> u(-2.0f, 3.0f);
  for (auto& v : r.values) v = u(rng);
  r.valid[5] = 0;
  r.values[5] = NAN;
  const float lo = -1.0f, hi = 2.0f;
  std::uint32_t w = 0, h = 0;
  auto px = decode_rgb(encode_png(r, lo, hi), w, h);
  ASSERT_EQ(w, 16u);
  ASSERT_EQ(h, 8u);
  // Invert through the 256-level lookup table.
  std::vector<std::array<std::uint8_t, 3>> lut(256);
  for (int l = 0; l < 256; ++l) lut[l] = viridis(l / 255.0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const std::array<std::uint8_t, 3> c{px[i * 3], px[i * 3 + 1], px[i * 3 + 2]};
    if (!r.valid[i]) {
      EXPECT_EQ(c, (std::array<std::uint8_t, 3>{0, 0, 0}));
      continue;
    }
    int best = 0, best_d = 1 << 30;
    for (int l = 0; l < 256; ++l) {
      int d = 0;
      for (int k = 0; k < 3; ++k) d += (lut[l][k] - c[k]) * (lut[l][k] - c[k]);
      if (d < best_d) {
        best_d = d;
        best = l;
      }
    }
    EXPECT_EQ(best_d, 0);
    const double expected = std::clamp((r.values[i] - lo) / (hi - lo), 0.0f, 1.0f);
    // Neighbouring levels can share a colour after rounding.
    EXPECT_NEAR(best / 255.0, expected, 2.0 / 255.0) << "cell " << i;
  }
  EXPECT_THROW(encode_png(r, 1.0f, 1.0f), ConfigError);
}

TEST(Png, RowZeroIsNorth) {
  geo::Grid grid(3, 2, geo::BoundingBox::global());
  geo::RangeRaster r(grid, 0.0f);
  std::fill_n(r.values.begin(), 3, 1.0f);  // northern row bright
  std::uint32_t w = 0, h = 0;
  auto px = decode_rgb(encode_png(r, 0.0f, 1.0f), w, h);
  EXPECT_EQ(px[0], 253);
  EXPECT_EQ(px[3 * 3], 68);
}

TEST(Benchmark, ConstantOnlyReportAndExactMean) {
  auto world = data::generate_synthetic_world(tiny_world_spec(3));
  auto tasks = make_tasks(world.held_out_ids(), world.truth, &world.embeddings, world.observations);
  ASSERT_EQ(tasks.size(), 2u);
  auto m = model::Model<float>::initialize(tiny_model_config(world.train_ids()));
  BenchmarkConfig c;
  c.conditions = {condition::kConstant};
  auto r = run_benchmark(m, tasks, c);
  ASSERT_EQ(r.results.size(), 1u);
  const auto& res = r.results[0];
  EXPECT_EQ(res.condition, "constant");
  double sum = 0.0;
  for (const auto& t : tasks) {
    EXPECT_EQ(res.ap.at(t.species_id), baseline_constant(t.truth));
    sum += res.ap.at(t.species_id);
  }
  EXPECT_EQ(res.map, sum / 2.0);
  EXPECT_NE(r.to_json().find("\"constant\""), std::string::npos);
  EXPECT_EQ(r.to_csv().substr(0, 32), "condition,shots,seed,species_id,");
}

TEST(Benchmark, DeterministicAndSkipsMissingInputs) {
  auto world = data::generate_synthetic_world(tiny_world_spec(4));
  auto ids = world.held_out_ids();
  ids.push_back(world.train_ids()[0]);
  auto tasks = make_tasks(ids, world.truth, &world.embeddings, world.observations);
  tasks[0].habitat.reset();
  auto m = model::Model<float>::initialize(tiny_model_config(world.train_ids()));
  BenchmarkConfig c;
  c.conditions = {condition::kConstant,  condition::kModelMean,    condition::kHabitat,    condition::kRange,
                  condition::kToken,     condition::kFewShotPrior, condition::kFewShotNone};
  c.shots = {1, 3};
  c.seeds = {0, 1};
  c.fewshot_negatives = 200;
  BenchmarkInputs in{.train_observations = &world.observations};
  auto a = run_benchmark(m, tasks, c, in);
  auto b = run_benchmark(m, tasks, c, in);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_EQ(a.find(condition::kHabitat)->ap.size(), 2u);
  EXPECT_EQ(a.find(condition::kToken)->ap.size(), 1u);  // only the seen species has a token
  EXPECT_EQ(a.find(condition::kFewShotPrior, 3, 1)->ap.size(), 3u);
  EXPECT_EQ(a.results.size(), 5u + 2u * 2u * 2u);
  for (const auto& r : a.results) {
    std::vector<double> aps;
    for (const auto& [_, v] : r.ap) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      aps.push_back(v);
    }
    EXPECT_EQ(r.map, mean_average_precision(aps));
  }
  EXPECT_FALSE(a.notes.empty());
  const double mean = (a.find(condition::kFewShotNone, 1, 0)->map + a.find(condition::kFewShotNone, 1, 1)->map) / 2;
  EXPECT_EQ(a.mean_map(condition::kFewShotNone, 1), mean);

  c.conditions = {"nonsense"};
  EXPECT_THROW(run_benchmark(m, tasks, c), ConfigError);
}

TEST(Benchmark, MakeTasksSkipsDegenerateMasks) {
  geo::Grid grid(4, 2, geo::BoundingBox::global());
  std::map<std::uint32_t, geo::RangeRaster> truth{{1, geo::RangeRaster(grid, 0.0f)}, {2, geo::RangeRaster(grid, 0.0f)}};
  truth.at(2).values[3] = 1.0f;
  std::vector<std::string> notes;
  auto tasks = make_tasks({1, 2, 3}, truth, nullptr, {}, &notes);
  ASSERT_EQ(tasks.size(), 1u);
  EXPECT_EQ(tasks[0].species_id, 2u);
  EXPECT_EQ(notes.size(), 2u);
}
