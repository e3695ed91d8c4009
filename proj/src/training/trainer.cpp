#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "lesinr/training.hpp"

namespace lesinr::training {

using nlohmann::json;
using numkit::Tensor;
using numkit::Var;
using Pairs = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (negatives < 2) throw ConfigError("need at least 2 negatives per location");
  if (!(lambda_pos > 0.0)) throw ConfigError("lambda_pos must be positive");
  if (embed_dim == 0 || text_hidden == 0) throw ConfigError("model widths must be positive");
}

std::string TrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"learning_rate", learning_rate},
              {"batch_size", batch_size},
              {"negatives", negatives},
              {"lambda_pos", lambda_pos},
              {"seed", seed},
              {"use_env", use_env},
              {"text_branch", text_branch},
              {"residual_blocks", residual_blocks},
              {"embed_dim", embed_dim},
              {"text_hidden", text_hidden}}
      .dump(2);
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  TrainConfig c;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    const auto known = json::parse(c.to_json());
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown training config key '" + key + "'");
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("epochs", c.epochs);
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    get("negatives", c.negatives);
    get("lambda_pos", c.lambda_pos);
    get("seed", c.seed);
    get("use_env", c.use_env);
    get("text_branch", c.text_branch);
    get("residual_blocks", c.residual_blocks);
    get("embed_dim", c.embed_dim);
    get("text_hidden", c.text_hidden);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string EpochRecord::to_json() const {
  return json{{"epoch", epoch},
              {"token_loss", token_loss},
              {"text_loss", text_loss},
              {"wall_seconds", wall_seconds},
              {"observations_per_second", observations_per_second}}
      .dump();
}

namespace {

std::vector<std::uint32_t> training_species(const std::vector<data::ObservationRecord>& obs) {
  std::vector<std::uint32_t> ids;
  ids.reserve(obs.size());
  for (const auto& o : obs) ids.push_back(o.species_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) throw ConfigError("no training observations");
  return ids;
}

template <typename T>
model::Model<T> initial_model(const TrainConfig& c, const std::vector<data::ObservationRecord>& obs,
                              const data::EmbeddingStore* text, const geo::CovariateStack* cov) {
  c.validate();
  if (c.use_env && !cov) throw ConfigError("use_env requires a covariate stack");
  model::ModelConfig m;
  m.env_channels = c.use_env ? static_cast<std::uint32_t>(cov->channels()) : 0;
  m.residual_blocks = c.residual_blocks;
  m.embed_dim = c.embed_dim;
  m.text_dim = text ? text->dim() : 4096;
  m.text_hidden = c.text_hidden;
  m.seed = c.seed;
  m.species_ids = training_species(obs);
  return model::Model<T>::initialize(std::move(m));
}

Rng trainer_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7472u};
  return Rng(seq);
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(TrainConfig config, const std::vector<data::ObservationRecord>& observations,
                    const data::EmbeddingStore* text, const geo::CovariateStack* covariates)
    : config_(config),
      observations_(observations),
      text_(text),
      covariates_(config.use_env ? covariates : nullptr),
      model_(initial_model<T>(config, observations, text, covariates)),
      adam_(numkit::AdamState<T>::zeros_like(model_.params(), {.learning_rate = config.learning_rate})),
      negatives_(std::min<std::uint32_t>(config.negatives, static_cast<std::uint32_t>(model_.species_count()))),
      sampler_(static_cast<std::uint32_t>(model_.species_count()), std::max<std::uint32_t>(negatives_, 2)),
      rng_(trainer_rng(config.seed)) {
  rows_.reserve(observations_.size());
  positions_.reserve(observations_.size());
  for (const auto& o : observations_) {
    rows_.push_back(static_cast<std::uint32_t>(model_.species_row(o.species_id)));
    positions_.push_back(geo::encode_position(o.location(), covariates_));
  }
  has_text_.assign(model_.species_count(), 0);
  if (text_) {
    for (std::size_t r = 0; r < model_.species_count(); ++r) {
      has_text_[r] = text_->has_sections(model_.config().species_ids[r]) ? 1 : 0;
    }
  }
}

template <typename T>
typename Trainer<T>::BatchGradients Trainer<T>::gradients(std::span<const std::size_t> batch, Rng& rng) const {
  if (batch.empty()) throw ConfigError("empty training batch");
  const std::size_t b = batch.size();
  const std::uint32_t m = negatives_;
  const auto s = static_cast<std::uint32_t>(model_.species_count());
  const LossWeights lw{.lambda_pos = config_.lambda_pos, .negatives = m, .species = s};
  lw.validate();
  const T w_pos = static_cast<T>(lw.positive() / b);
  const T w_obs = static_cast<T>(lw.observation_negative() / b);
  const T w_rand = static_cast<T>(lw.random_negative() / b);

  // Rows 0..B-1 are the observations, B..2B-1 their random partners.
  std::vector<geo::PositionInput> inputs;
  inputs.reserve(2 * b);
  for (auto i : batch) inputs.push_back(positions_.at(i));
  std::vector<std::uint32_t> slates(b * (2 * std::size_t{m}));  // per obs: true, M-1 obs negs, M random
  std::vector<std::uint32_t> scratch;
  for (std::size_t k = 0; k < b; ++k) {
    inputs.push_back(geo::encode_position(geo::sample_uniform_location(rng), covariates_));
    auto* slot = slates.data() + k * 2 * m;
    slot[0] = rows_[batch[k]];
    sampler_.observation_slate(slot[0], rng, scratch);
    std::copy(scratch.begin(), scratch.end(), slot + 1);
    sampler_.random_slate(rng, scratch);
    std::copy(scratch.begin(), scratch.end(), slot + m);
  }

  numkit::Tape<T> tape;
  const Var features =
      model_.location_features(tape, tape.constant(model::position_matrix<T>(inputs, model_.config().input_width())));

  // Both branches score the same slates; `row_of` maps a species row to the
  // row of the branch's species matrix, or -1 when the branch lacks it.
  auto branch_loss = [&](Var species, const std::vector<std::int64_t>* row_of, bool skip_untexted) {
    Pairs pairs;
    std::vector<std::uint8_t> targets;
    std::vector<T> weights;
    pairs.reserve(b * 2 * m);
    targets.reserve(b * 2 * m);
    weights.reserve(b * 2 * m);
    std::size_t used = 0;
    for (std::size_t k = 0; k < b; ++k) {
      const auto* slot = slates.data() + k * 2 * m;
      if (skip_untexted && !has_text_[slot[0]]) continue;
      ++used;
      auto add = [&](std::uint32_t loc_row, std::uint32_t species_row, std::uint8_t target, T weight) {
        const std::int64_t r = row_of ? (*row_of)[species_row] : species_row;
        if (r < 0) return;
        pairs.emplace_back(loc_row, static_cast<std::uint32_t>(r));
        targets.push_back(target);
        weights.push_back(weight);
      };
      const auto obs_row = static_cast<std::uint32_t>(k), rand_row = static_cast<std::uint32_t>(b + k);
      add(obs_row, slot[0], 1, w_pos);
      for (std::uint32_t j = 1; j < m; ++j) add(obs_row, slot[j], 0, w_obs);
      for (std::uint32_t j = 0; j < m; ++j) add(rand_row, slot[m + j], 0, w_rand);
    }
    std::optional<Var> loss;
    if (!pairs.empty()) {
      loss = tape.log_loss(tape.sigmoid(tape.dot(features, species, std::move(pairs))), std::move(targets),
                           std::move(weights));
    }
    return std::make_pair(loss, used);
  };

  BatchGradients out;
  out.diagnostics.observations = b;
  auto [token_loss, token_used] = branch_loss(model_.token_table(tape), nullptr, false);
  (void)token_used;
  Var total = *token_loss;
  out.diagnostics.token_loss = static_cast<double>(tape.value(total).item());

  if (text_ && config_.text_branch) {
    // One section per species per iteration, for species appearing in a
    // slate of an observation whose own species has text.
    std::vector<std::int64_t> row_of(s, -1);
    std::vector<std::uint32_t> used_rows;
    for (std::size_t k = 0; k < b; ++k) {
      const auto* slot = slates.data() + k * 2 * m;
      if (!has_text_[slot[0]]) continue;
      for (std::uint32_t j = 0; j < 2 * m; ++j) {
        if (has_text_[slot[j]] && row_of[slot[j]] < 0) {
          row_of[slot[j]] = 0;
          used_rows.push_back(slot[j]);
        }
      }
    }
    if (!used_rows.empty()) {
      std::sort(used_rows.begin(), used_rows.end());
      const std::size_t dim = text_->dim();
      Tensor<T> text_rows(numkit::Shape{used_rows.size(), dim});
      for (std::size_t u = 0; u < used_rows.size(); ++u) {
        row_of[used_rows[u]] = static_cast<std::int64_t>(u);
        const auto* rec = data::sample_section(*text_, model_.config().species_ids[used_rows[u]], rng);
        std::copy(rec->vector.begin(), rec->vector.end(), text_rows.row(u).begin());
      }
      const Var species_text = model_.text_embedding(tape, tape.constant(std::move(text_rows)));
      auto [text_loss, text_used] = branch_loss(species_text, &row_of, true);
      if (text_loss) {
        out.diagnostics.text_observations = text_used;
        out.diagnostics.text_loss = static_cast<double>(tape.value(*text_loss).item()) * b / text_used;
        total = tape.add(total, *text_loss);
      }
    }
  }

  const double loss_value = static_cast<double>(tape.value(total).item());
  if (!std::isfinite(loss_value)) throw NumericError("non-finite training loss");
  out.grads = tape.backward(total);
  return out;
}

template <typename T>
StepDiagnostics Trainer<T>::train_step(std::span<const std::size_t> batch, Rng& rng, const std::string& batch_label) {
  try {
    auto g = gradients(batch, rng);
    numkit::adam_step(model_.params(), g.grads, adam_);
    return g.diagnostics;
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + (batch_label.empty() ? "" : " in " + batch_label) + "; step aborted");
  }
}

template <typename T>
TrainReport Trainer<T>::train(const std::filesystem::path& checkpoint, const std::filesystem::path& report) {
  TrainReport out;
  out.negatives_used = negatives_;
  if (negatives_ < config_.negatives) {
    out.notes.push_back("negatives clamped from " + std::to_string(config_.negatives) + " to S=" +
                        std::to_string(negatives_));
  }
  if (negatives_ < 2) throw ConfigError("need at least 2 training species");
  std::ofstream log;
  if (!report.empty()) {
    log.open(report, std::ios::trunc);
    if (!log) throw ConfigError("cannot write training report " + report.string());
  }
  if (!checkpoint.empty()) model::save_checkpoint(model_, checkpoint);

  std::vector<std::size_t> order(observations_.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::uint32_t epoch = 1; epoch <= config_.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng_);
    double token_sum = 0.0, text_sum = 0.0;
    std::size_t token_n = 0, text_n = 0, step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size, ++step) {
      const std::span<const std::size_t> batch(order.data() + begin,
                                               std::min<std::size_t>(config_.batch_size, order.size() - begin));
      const auto d = train_step(batch, rng_, "epoch " + std::to_string(epoch) + " batch " + std::to_string(step));
      token_sum += d.token_loss * d.observations;
      token_n += d.observations;
      text_sum += d.text_loss * d.text_observations;
      text_n += d.text_observations;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EpochRecord rec{epoch, token_n ? token_sum / token_n : 0.0, text_n ? text_sum / text_n : 0.0, secs,
                    secs > 0 ? order.size() / secs : 0.0};
    out.epochs.push_back(rec);
    if (!checkpoint.empty()) model::save_checkpoint(model_, checkpoint);
    if (log) log << rec.to_json() << '\n' << std::flush;
  }
  return out;
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace lesinr::training
