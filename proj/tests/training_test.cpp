#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "lesinr/data/synthetic.hpp"
#include "lesinr/errors.hpp"
#include "lesinr/training.hpp"
#include "support/oracles.hpp"
#include "support/trainer_check.hpp"

namespace lesinr::training {
namespace {

using oracle::full_loss;
using oracle::subsets;
using oracle::TinySetup;
using oracle::total_loss;

TEST(SampledLoss, HandArithmetic) {
  const LossBatch b{.at_observation = {0.5, 0.5}, .labels = {1, 0}, .at_random = {0.5, 0.5}};
  EXPECT_NEAR(sampled_anfull_loss(b, {.lambda_pos = 1.0, .negatives = 2, .species = 3}), 2.0 * std::log(2.0), 1e-12);
}

TEST(SampledLoss, FullSlateEqualsUnsubsampledLoss) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (std::uint32_t s : {2u, 5u, 9u}) {
    std::vector<double> y(s), yr(s);
    for (auto& v : y) v = u(rng);
    for (auto& v : yr) v = u(rng);
    LossBatch b{.at_observation = y, .labels = std::vector<std::uint8_t>(s, 0), .at_random = yr};
    b.labels[0] = 1;
    EXPECT_NEAR(sampled_anfull_loss(b, {.lambda_pos = 7.0, .negatives = s, .species = s}), full_loss(y, 0, yr, 7.0),
                1e-12);
  }
}

TEST(SampledLoss, ExhaustivelyUnbiased) {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (std::uint32_t s : {4u, 5u, 6u}) {
    for (std::uint32_t m : {2u, 3u}) {
      std::vector<double> y(s), yr(s);
      for (auto& v : y) v = u(rng);
      for (auto& v : yr) v = u(rng);
      const std::size_t true_row = s / 2;
      std::vector<std::size_t> others, all(s);
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t j = 0; j < s; ++j) {
        if (j != true_row) others.push_back(j);
      }
      const auto obs_slates = subsets(others, m - 1);
      const auto rand_slates = subsets(all, m);
      double sum = 0.0;
      for (const auto& os : obs_slates) {
        for (const auto& rs : rand_slates) {
          LossBatch b;
          b.at_observation.push_back(y[true_row]);
          b.labels.push_back(1);
          for (auto j : os) {
            b.at_observation.push_back(y[j]);
            b.labels.push_back(0);
          }
          for (auto j : rs) b.at_random.push_back(yr[j]);
          sum += sampled_anfull_loss(b, {.lambda_pos = 3.0, .negatives = m, .species = s});
        }
      }
      const double mean = sum / static_cast<double>(obs_slates.size() * rand_slates.size());
      EXPECT_NEAR(mean, full_loss(y, true_row, yr, 3.0), 1e-12) << "S=" << s << " M=" << m;
    }
  }
}

TEST(SampledLoss, InvariantToSlotOrder) {
  const LossBatch a{.at_observation = {0.3, 0.6, 0.2, 0.9}, .labels = {0, 1, 0, 0}, .at_random = {0.1, 0.4, 0.7, 0.2}};
  const LossBatch b{.at_observation = {0.9, 0.2, 0.6, 0.3}, .labels = {0, 0, 1, 0}, .at_random = {0.7, 0.2, 0.1, 0.4}};
  const LossWeights w{.lambda_pos = 5.0, .negatives = 4, .species = 10};
  EXPECT_NEAR(sampled_anfull_loss(a, w), sampled_anfull_loss(b, w), 1e-14);
}

TEST(SampledLoss, Monotone) {
  const LossWeights w{.lambda_pos = 2.0, .negatives = 3, .species = 8};
  LossBatch b{.at_observation = {0.4, 0.5, 0.5}, .labels = {1, 0, 0}, .at_random = {0.5, 0.5, 0.5}};
  const double base = sampled_anfull_loss(b, w);
  auto up = b;
  up.at_observation[0] = 0.6;
  EXPECT_LT(sampled_anfull_loss(up, w), base);
  auto neg = b;
  neg.at_observation[1] = 0.7;
  EXPECT_GT(sampled_anfull_loss(neg, w), base);
  auto rnd = b;
  rnd.at_random[2] = 0.7;
  EXPECT_GT(sampled_anfull_loss(rnd, w), base);
}

TEST(SampledLoss, ClampsSaturatedProbabilities) {
  const LossBatch b{.at_observation = {0.0, 1.0}, .labels = {1, 0}, .at_random = {1.0, 0.5}};
  EXPECT_TRUE(std::isfinite(sampled_anfull_loss(b, {.lambda_pos = 1.0, .negatives = 2, .species = 2})));
}

TEST(SampledLoss, RejectsBadInputs) {
  const LossBatch ok{.at_observation = {0.5, 0.5}, .labels = {1, 0}, .at_random = {0.5, 0.5}};
  EXPECT_THROW(sampled_anfull_loss(ok, {.lambda_pos = 1.0, .negatives = 2, .species = 1}), ConfigError);
  EXPECT_THROW(sampled_anfull_loss(ok, {.lambda_pos = 0.0, .negatives = 2, .species = 3}), ConfigError);
  EXPECT_THROW(sampled_anfull_loss(ok, {.lambda_pos = 1.0, .negatives = 3, .species = 3}), DimensionError);
  auto two_hot = ok;
  two_hot.labels = {1, 1};
  EXPECT_THROW(sampled_anfull_loss(two_hot, {.lambda_pos = 1.0, .negatives = 2, .species = 3}), ConfigError);
  EXPECT_THROW(LossWeights({.negatives = 1, .species = 3}).validate(), ConfigError);
}

data::ObservationRecord obs(std::uint32_t id, double lat = 10.0, double lon = 20.0) {
  return data::make_observation(id, geo::GeoPoint(lat, lon));
}

TEST(Negatives, FullSlateWhenMEqualsS) {
  std::vector<std::uint32_t> ids{3, 5, 8, 13, 21};
  Rng rng(1);
  const auto d = sample_negatives(obs(8), ids, 5, rng);
  EXPECT_EQ(std::set<std::uint32_t>(d.at_observation.begin(), d.at_observation.end()),
            (std::set<std::uint32_t>{3, 5, 13, 21}));
  EXPECT_EQ(d.at_observation.size(), 4u);
  EXPECT_EQ(std::set<std::uint32_t>(d.at_random.begin(), d.at_random.end()),
            std::set<std::uint32_t>(ids.begin(), ids.end()));
}

TEST(Negatives, ExcludesTrueSpeciesAndMatchesFrequency) {
  constexpr std::uint32_t kS = 20, kM = 5;
  constexpr int kDraws = 100000;
  std::vector<std::uint32_t> ids(kS);
  std::iota(ids.begin(), ids.end(), 100);
  const std::uint32_t truth = 107;
  std::map<std::uint32_t, int> at_obs, at_rand;
  Rng rng(42);
  for (int t = 0; t < kDraws; ++t) {
    const auto d = sample_negatives(obs(truth), ids, kM, rng);
    ASSERT_EQ(d.at_observation.size(), kM - 1);
    ASSERT_EQ(d.at_random.size(), kM);
    ASSERT_EQ(std::set<std::uint32_t>(d.at_observation.begin(), d.at_observation.end()).size(), kM - 1);
    ASSERT_EQ(std::set<std::uint32_t>(d.at_random.begin(), d.at_random.end()).size(), kM);
    for (auto id : d.at_observation) {
      ASSERT_NE(id, truth);
      ++at_obs[id];
    }
    for (auto id : d.at_random) ++at_rand[id];
  }
  const double p_obs = (kM - 1.0) / (kS - 1.0), p_rand = static_cast<double>(kM) / kS;
  for (auto id : ids) {
    if (id != truth) {
      EXPECT_NEAR(at_obs[id] / (p_obs * kDraws), 1.0, 0.02) << id;
    }
    EXPECT_NEAR(at_rand[id] / (p_rand * kDraws), 1.0, 0.02) << id;
  }
}

TEST(Negatives, RejectsTooFewSpecies) {
  Rng rng(0);
  EXPECT_THROW(sample_negatives(obs(1), {1, 2, 3}, 4, rng), ConfigError);
  EXPECT_THROW(sample_negatives(obs(9), {1, 2, 3}, 2, rng), LookupError);
}

TEST(Negatives, DeterministicPerSeed) {
  std::vector<std::uint32_t> ids(30);
  std::iota(ids.begin(), ids.end(), 0);
  Rng a(5), b(5);
  const auto x = sample_negatives(obs(3), ids, 6, a);
  const auto y = sample_negatives(obs(3), ids, 6, b);
  EXPECT_EQ(x.at_observation, y.at_observation);
  EXPECT_EQ(x.at_random, y.at_random);
  EXPECT_EQ(x.random_location, y.random_location);
}

TEST(Trainer, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto r = oracle::check_trainer_gradients(seed);
    ASSERT_GT(r.text_observations, 0u);
    EXPECT_LT(r.max_rel_error, 1e-6) << "seed " << seed << " worst " << r.worst;
  }
}

TEST(Trainer, SpeciesWithoutTextLeavesTextHeadUntouched) {
  TinySetup setup;
  Trainer<double> trainer(setup.config, setup.observations, &setup.text);
  // Observations 12..14 belong to species 5, which has no text.
  const std::vector<std::size_t> batch{12, 13, 14};
  Rng rng(8);
  const auto g = trainer.gradients(batch, rng);
  EXPECT_EQ(g.diagnostics.text_observations, 0u);
  EXPECT_EQ(g.diagnostics.text_loss, 0.0);
  for (int layer = 0; layer < 3; ++layer) {
    for (bool bias : {false, true}) {
      const auto it = g.grads.find(model::param_names::text_layer(layer, bias));
      if (it == g.grads.end()) continue;
      for (double v : it->second.data()) ASSERT_EQ(v, 0.0);
    }
  }
  double token_mass = 0.0;
  for (double v : g.grads.at(model::param_names::kTokens).data()) token_mass += std::abs(v);
  EXPECT_GT(token_mass, 0.0);
}

TEST(Trainer, UntouchedTokenRowsAreBitIdenticalAfterAStep) {
  TinySetup setup;
  // Ten species, M = 2, one observation: at most four rows get gradient.
  setup.observations.clear();
  for (std::uint32_t s = 1; s <= 10; ++s) setup.observations.push_back(obs(s, s * 5.0, s * 10.0));
  setup.config.negatives = 2;
  Trainer<double> trainer(setup.config, setup.observations, &setup.text);
  const std::vector<std::size_t> batch{6};
  Rng rng(3);
  Rng peek = rng;
  const auto g = trainer.gradients(batch, peek);
  const auto before = trainer.model().params().get(model::param_names::kTokens);
  trainer.train_step(batch, rng);
  const auto& after = trainer.model().params().get(model::param_names::kTokens);
  const auto& grad = g.grads.at(model::param_names::kTokens);
  const std::size_t d = before.cols();
  std::size_t unchanged = 0, touched = 0;
  for (std::size_t r = 0; r < before.rows(); ++r) {
    bool zero = true;
    for (std::size_t k = 0; k < d; ++k) zero = zero && grad[r * d + k] == 0.0;
    bool same = true;
    for (std::size_t k = 0; k < d; ++k) same = same && before[r * d + k] == after[r * d + k];
    if (zero) {
      EXPECT_TRUE(same) << "row " << r;
      ++unchanged;
    } else {
      EXPECT_FALSE(same) << "row " << r;
      ++touched;
    }
  }
  EXPECT_GE(unchanged, 6u);
  EXPECT_GE(touched, 1u);
}

data::SyntheticWorld smoke_world() {
  data::SyntheticWorldSpec spec;
  spec.grid_width = 32;
  spec.grid_height = 16;
  spec.climate_fields = 3;
  spec.habitat_fields = 2;
  spec.train_species = 16;
  spec.held_out_species = 1;
  spec.min_observations = 40;
  spec.max_observations = 60;
  spec.text_dim = 32;
  spec.seed = 5;
  return data::generate_synthetic_world(spec);
}

TrainConfig small_config() {
  TrainConfig c;
  c.embed_dim = 32;
  c.text_hidden = 32;
  c.residual_blocks = 2;
  c.batch_size = 32;
  c.learning_rate = 0.002;
  c.seed = 1;
  return c;
}

std::vector<data::ObservationRecord> train_split(const data::SyntheticWorld& world) {
  std::vector<data::ObservationRecord> out;
  for (const auto& o : world.observations) {
    if (!world.find(o.species_id).held_out) out.push_back(o);
  }
  return out;
}

TEST(Trainer, SmokeRunDecreasesMovingAverageLoss) {
  const auto world = smoke_world();
  const auto train = train_split(world);
  Trainer<float> trainer(small_config(), train, &world.embeddings);
  EXPECT_EQ(trainer.negatives(), 16u);  // M clamped to S
  Rng rng(77);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) {
    std::vector<std::size_t> batch(32);
    for (auto& i : batch) i = pick(rng);
    losses.push_back(total_loss(trainer.train_step(batch, rng)));
  }
  const double start = std::accumulate(losses.begin(), losses.begin() + 50, 0.0) / 50;
  const double end = std::accumulate(losses.end() - 50, losses.end(), 0.0) / 50;
  EXPECT_LT(end, start);
}

TEST(Trainer, StoreWithoutSectionsMatchesDisabledTextBranch) {
  const auto world = smoke_world();
  const auto train = train_split(world);
  std::vector<data::TextEmbeddingRecord> summaries;
  for (const auto& r : world.embeddings.records()) {
    if (r.kind != data::TextKind::section) summaries.push_back(r);
  }
  const data::EmbeddingStore no_sections(world.embeddings.dim(), summaries);
  auto config = small_config();
  config.epochs = 1;
  Trainer<float> a(config, train, &no_sections);
  a.train();
  config.text_branch = false;
  Trainer<float> b(config, train, &world.embeddings);
  b.train();
  EXPECT_TRUE(a.model() == b.model());
}

TEST(Trainer, ZeroEpochsWritesTheInitialModel) {
  const auto world = smoke_world();
  const auto train = train_split(world);
  auto config = small_config();
  config.epochs = 0;
  Trainer<float> trainer(config, train, &world.embeddings);
  const auto path = std::filesystem::temp_directory_path() / "lesinr_training_zero.lesm";
  const auto report = trainer.train(path);
  EXPECT_TRUE(report.epochs.empty());
  const auto loaded = model::load_checkpoint<float>(path);
  EXPECT_TRUE(loaded == model::Model<float>::initialize(trainer.model().config()));
  std::filesystem::remove(path);
}

TEST(Trainer, SameSeedIsBitIdentical) {
  const auto world = smoke_world();
  const auto train = train_split(world);
  auto config = small_config();
  config.epochs = 1;
  Trainer<float> a(config, train, &world.embeddings);
  Trainer<float> b(config, train, &world.embeddings);
  const auto ra = a.train();
  b.train();
  EXPECT_EQ(model::serialize_checkpoint(a.model()), model::serialize_checkpoint(b.model()));
  ASSERT_EQ(ra.epochs.size(), 1u);
  EXPECT_GT(ra.epochs[0].observations_per_second, 0.0);
  config.seed = 2;
  Trainer<float> c(config, train, &world.embeddings);
  c.train();
  EXPECT_NE(model::serialize_checkpoint(a.model()), model::serialize_checkpoint(c.model()));
}

TEST(Trainer, WritesCheckpointAndReportPerEpoch) {
  const auto world = smoke_world();
  const auto train = train_split(world);
  auto config = small_config();
  config.epochs = 2;
  Trainer<float> trainer(config, train, &world.embeddings);
  const auto dir = std::filesystem::temp_directory_path();
  const auto ckpt = dir / "lesinr_training_epochs.lesm", log = dir / "lesinr_training_epochs.jsonl";
  const auto report = trainer.train(ckpt, log);
  ASSERT_EQ(report.epochs.size(), 2u);
  EXPECT_FALSE(report.notes.empty());  // M clamp
  EXPECT_TRUE(model::load_checkpoint<float>(ckpt) == trainer.model());
  std::ifstream in(log);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    EXPECT_NE(line.find("\"token_loss\""), std::string::npos);
    ++lines;
  }
  EXPECT_EQ(lines, 2);
  std::filesystem::remove(ckpt);
  std::filesystem::remove(log);
}

TEST(TrainConfig, JsonRoundtripAndValidation) {
  auto c = small_config();
  c.use_env = true;
  c.lambda_pos = 17.5;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()), c);
  auto bad = c;
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.negatives = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(TrainConfig::from_json("{\"epochs\": \"ten\"}"), ConfigError);
}

TEST(Trainer, RejectsMissingInputs) {
  const std::vector<data::ObservationRecord> none;
  EXPECT_THROW(Trainer<float>(small_config(), none), ConfigError);
  auto config = small_config();
  config.use_env = true;
  const std::vector<data::ObservationRecord> some{obs(1), obs(2)};
  EXPECT_THROW(Trainer<float>(config, some), ConfigError);
}

}  // namespace
}  // namespace lesinr::training
