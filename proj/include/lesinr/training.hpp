#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lesinr/data/embeddings.hpp"
#include "lesinr/data/observations.hpp"
#include "lesinr/model.hpp"

namespace lesinr::training {

struct LossWeights {
  double lambda_pos = 2048.0;
  std::uint32_t negatives = 192;  // M
  std::uint32_t species = 0;      // S

  // ConfigError unless 2 <= M <= S and lambda_pos > 0.
  void validate() const;
  double positive() const { return lambda_pos / species; }
  double observation_negative() const { return (species - 1.0) / (negatives - 1.0) / species; }
  double random_negative() const { return 1.0 / negatives; }
};

// Predictions for one observation. Slot 0 of `at_observation` belongs to the
// true species unless `labels` says otherwise.
struct LossBatch {
  std::vector<double> at_observation;  // y-hat, length M
  std::vector<std::uint8_t> labels;    // z, one-hot, length M
  std::vector<double> at_random;       // y-hat', length M
};

// Reference evaluation of the subsampled assume-negative loss:
//   -(1/S) sum_j [ z_j lambda log y_j + (1-z_j) (S-1)/(M-1) log(1-y_j) + (S/M) log(1-y'_j) ]
// with probabilities clamped to [1e-7, 1 - 1e-7].
double sampled_anfull_loss(const LossBatch& batch, const LossWeights& weights);

// Draws negative slates without replacement in O(M) per draw.
class SlateSampler {
 public:
  SlateSampler(std::uint32_t species, std::uint32_t negatives);

  // M-1 distinct rows excluding `true_row`.
  void observation_slate(std::uint32_t true_row, Rng& rng, std::vector<std::uint32_t>& out);
  // M distinct rows from all S.
  void random_slate(Rng& rng, std::vector<std::uint32_t>& out);

 private:
  void draw(std::uint32_t population, std::uint32_t count, Rng& rng, std::vector<std::uint32_t>& out);

  std::uint32_t species_;
  std::uint32_t negatives_;
  std::vector<std::uint32_t> perm_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> undo_;
};

struct NegativeDraw {
  std::vector<std::uint32_t> at_observation;  // M-1 species ids
  std::vector<std::uint32_t> at_random;       // M species ids
  geo::GeoPoint random_location;
};

// Slates for one observation over the training species list (ids, in
// token-row order). ConfigError when S < M.
NegativeDraw sample_negatives(const data::ObservationRecord& obs, const std::vector<std::uint32_t>& species_ids,
                              std::uint32_t negatives, Rng& rng);

struct TrainConfig {
  std::uint32_t epochs = 10;
  double learning_rate = 0.0005;
  std::uint32_t batch_size = 256;
  std::uint32_t negatives = 192;
  double lambda_pos = 2048.0;
  std::uint64_t seed = 0;
  bool use_env = false;
  bool text_branch = true;
  // Model shape.
  std::uint32_t residual_blocks = 4;
  std::uint32_t embed_dim = 256;
  std::uint32_t text_hidden = 512;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(std::string_view text);
  bool operator==(const TrainConfig&) const = default;
};

struct StepDiagnostics {
  double token_loss = 0.0;  // mean per observation
  double text_loss = 0.0;   // mean per observation that had text
  std::size_t observations = 0;
  std::size_t text_observations = 0;
};

struct EpochRecord {
  std::uint32_t epoch = 0;
  double token_loss = 0.0;
  double text_loss = 0.0;
  double wall_seconds = 0.0;
  double observations_per_second = 0.0;

  std::string to_json() const;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::uint32_t negatives_used = 0;
  std::vector<std::string> notes;
};

// Owns a model and its optimizer state; single-threaded and deterministic for
// a given seed.
template <typename T>
class Trainer {
 public:
  // `text` and `covariates` are optional and must outlive the trainer.
  Trainer(TrainConfig config, const std::vector<data::ObservationRecord>& observations,
          const data::EmbeddingStore* text = nullptr, const geo::CovariateStack* covariates = nullptr);

  const model::Model<T>& model() const { return model_; }
  model::Model<T>& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  std::uint32_t negatives() const { return negatives_; }

  struct BatchGradients {
    numkit::GradientSet<T> grads;
    StepDiagnostics diagnostics;
  };
  // Loss gradients for a batch of observation indices, without updating.
  BatchGradients gradients(std::span<const std::size_t> batch, Rng& rng) const;
  // gradients() followed by one Adam update. A non-finite loss aborts the
  // step with NumericError naming `batch_label`.
  StepDiagnostics train_step(std::span<const std::size_t> batch, Rng& rng, const std::string& batch_label = "");

  // Shuffled epochs. After each epoch the checkpoint (if given) is rewritten
  // atomically and one JSON line appended to the report (if given).
  TrainReport train(const std::filesystem::path& checkpoint = {}, const std::filesystem::path& report = {});

 private:
  TrainConfig config_;
  const std::vector<data::ObservationRecord>& observations_;
  const data::EmbeddingStore* text_;
  const geo::CovariateStack* covariates_;
  model::Model<T> model_;
  numkit::AdamState<T> adam_;
  std::uint32_t negatives_;
  std::vector<std::uint32_t> rows_;  // token row per observation
  std::vector<geo::PositionInput> positions_;
  std::vector<std::uint8_t> has_text_;  // per token row
  mutable SlateSampler sampler_;
  Rng rng_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace lesinr::training
