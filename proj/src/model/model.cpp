#include "lesinr/model.hpp"

#include <cmath>
#include <random>

#include "json.hpp"
#include "lesinr/numkit/kernels.hpp"

namespace lesinr::model {

using nlohmann::json;

namespace {

constexpr std::size_t kInferenceChunk = 2048;

}  // namespace

namespace param_names {
std::string loc_input_weight() { return "loc.input.weight"; }
std::string loc_input_bias() { return "loc.input.bias"; }
std::string loc_block(std::uint32_t block, int layer, bool bias) {
  return "loc.block" + std::to_string(block) + ".fc" + std::to_string(layer) + (bias ? ".bias" : ".weight");
}
std::string text_layer(int layer, bool bias) {
  return "text.fc" + std::to_string(layer) + (bias ? ".bias" : ".weight");
}
}  // namespace param_names

void ModelConfig::validate() const {
  if (embed_dim == 0 || text_dim == 0 || text_hidden == 0) throw ConfigError("model widths must be positive");
  std::unordered_map<std::uint32_t, int> seen;
  for (auto id : species_ids) {
    if (seen[id]++) throw ConfigError("duplicate species id " + std::to_string(id) + " in model config");
  }
  if (species_ids.empty()) throw ConfigError("model needs at least one training species");
}

std::string ModelConfig::to_json() const {
  json j;
  j["format"] = "lesinr-model";
  j["env_channels"] = env_channels;
  j["residual_blocks"] = residual_blocks;
  j["embed_dim"] = embed_dim;
  j["text_dim"] = text_dim;
  j["text_hidden"] = text_hidden;
  j["seed"] = seed;
  j["precision"] = precision == Precision::f32 ? "f32" : "f64";
  j["species_ids"] = species_ids;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    auto j = json::parse(text);
    c.env_channels = j.at("env_channels").get<std::uint32_t>();
    c.residual_blocks = j.at("residual_blocks").get<std::uint32_t>();
    c.embed_dim = j.at("embed_dim").get<std::uint32_t>();
    c.text_dim = j.at("text_dim").get<std::uint32_t>();
    c.text_hidden = j.at("text_hidden").get<std::uint32_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.precision = j.at("precision").get<std::string>() == "f64" ? Precision::f64 : Precision::f32;
    c.species_ids = j.at("species_ids").get<std::vector<std::uint32_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
T sigmoid(T z) {
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

template <typename T>
Model<T> Model<T>::initialize(ModelConfig config) {
  config.validate();
  config.precision = numkit::precision_of<T>();
  Rng rng(config.seed);
  numkit::ParameterSet<T> params;

  auto affine = [&](const std::string& w_name, const std::string& b_name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> w(numkit::Shape{in, out});
    for (auto& v : w.data()) v = static_cast<T>(u(rng));
    params.add(w_name, std::move(w));
    params.add(b_name, Tensor<T>(numkit::Shape{out}));
  };

  const std::size_t d = config.embed_dim;
  affine(param_names::loc_input_weight(), param_names::loc_input_bias(), config.input_width(), d);
  for (std::uint32_t b = 0; b < config.residual_blocks; ++b) {
    affine(param_names::loc_block(b, 1, false), param_names::loc_block(b, 1, true), d, d);
    affine(param_names::loc_block(b, 2, false), param_names::loc_block(b, 2, true), d, d);
  }

  {
    std::normal_distribution<double> n(0.0, 0.02);
    Tensor<T> tokens(numkit::Shape{config.species_ids.size(), d});
    for (auto& v : tokens.data()) v = static_cast<T>(n(rng));
    params.add(param_names::kTokens, std::move(tokens));
  }

  affine(param_names::text_layer(0, false), param_names::text_layer(0, true), config.text_dim, config.text_hidden);
  affine(param_names::text_layer(1, false), param_names::text_layer(1, true), config.text_hidden, config.text_hidden);
  affine(param_names::text_layer(2, false), param_names::text_layer(2, true), config.text_hidden, d);

  return Model(std::move(config), std::move(params));
}

template <typename T>
Model<T>::Model(ModelConfig config, numkit::ParameterSet<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  auto expect = [&](const std::string& name, numkit::Shape shape) {
    const auto& t = params_.get(name);
    if (t.shape() != shape) {
      throw DimensionError("parameter '" + name + "' has shape " + numkit::shape_string(t.shape()) + ", expected " +
                           numkit::shape_string(shape));
    }
  };
  expect(param_names::loc_input_weight(), {config_.input_width(), d});
  expect(param_names::loc_input_bias(), {d});
  for (std::uint32_t b = 0; b < config_.residual_blocks; ++b) {
    for (int l = 1; l <= 2; ++l) {
      expect(param_names::loc_block(b, l, false), {d, d});
      expect(param_names::loc_block(b, l, true), {d});
    }
  }
  expect(param_names::kTokens, {config_.species_ids.size(), d});
  expect(param_names::text_layer(0, false), {config_.text_dim, config_.text_hidden});
  expect(param_names::text_layer(1, false), {config_.text_hidden, config_.text_hidden});
  expect(param_names::text_layer(2, false), {config_.text_hidden, d});
  for (std::size_t i = 0; i < config_.species_ids.size(); ++i) rows_.emplace(config_.species_ids[i], i);
}

template <typename T>
std::size_t Model<T>::species_row(std::uint32_t id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) {
    throw LookupError("species " + std::to_string(id) + " has no token; use the text path");
  }
  return it->second;
}

template <typename T>
Var Model<T>::location_features(Tape<T>& tape, Var inputs) const {
  const auto& x = tape.value(inputs);
  if (x.cols() != config_.input_width()) {
    throw DimensionError("location input width " + std::to_string(x.cols()) + ", model expects " +
                         std::to_string(config_.input_width()));
  }
  auto p = [&](const std::string& name) { return tape.parameter(name, params_.get(name)); };
  Var h = tape.affine(inputs, p(param_names::loc_input_weight()), p(param_names::loc_input_bias()));
  for (std::uint32_t b = 0; b < config_.residual_blocks; ++b) {
    Var u = tape.relu(tape.affine(h, p(param_names::loc_block(b, 1, false)), p(param_names::loc_block(b, 1, true))));
    Var v = tape.relu(tape.affine(u, p(param_names::loc_block(b, 2, false)), p(param_names::loc_block(b, 2, true))));
    h = tape.add(h, v);
  }
  return h;
}

template <typename T>
Var Model<T>::text_embedding(Tape<T>& tape, Var text) const {
  const auto& t = tape.value(text);
  if (t.cols() != config_.text_dim) {
    throw DimensionError("text embedding width " + std::to_string(t.cols()) + ", model expects " +
                         std::to_string(config_.text_dim));
  }
  auto p = [&](const std::string& name) { return tape.parameter(name, params_.get(name)); };
  Var h = tape.relu(tape.affine(text, p(param_names::text_layer(0, false)), p(param_names::text_layer(0, true))));
  h = tape.relu(tape.affine(h, p(param_names::text_layer(1, false)), p(param_names::text_layer(1, true))));
  return tape.affine(h, p(param_names::text_layer(2, false)), p(param_names::text_layer(2, true)));
}

template <typename T>
Var Model<T>::token_table(Tape<T>& tape) const {
  return tape.parameter(param_names::kTokens, params_.get(param_names::kTokens));
}

template <typename T>
Tensor<T> position_matrix(std::span<const geo::PositionInput> inputs, std::uint32_t width) {
  if (inputs.empty()) throw DimensionError("no positions to encode");
  Tensor<T> x(numkit::Shape{inputs.size(), width});
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    const auto& in = inputs[r];
    if (in.width() != width) {
      throw DimensionError("position input width " + std::to_string(in.width()) + ", expected " +
                           std::to_string(width));
    }
    auto row = x.row(r);
    for (int k = 0; k < 4; ++k) row[k] = static_cast<T>(in.base[k]);
    for (std::size_t k = 0; k < in.env.size(); ++k) row[4 + k] = static_cast<T>(in.env[k]);
  }
  return x;
}

template <typename T>
Tensor<T> Model<T>::location_features(std::span<const geo::PositionInput> inputs) const {
  if (inputs.empty()) throw DimensionError("no positions to encode");
  const std::size_t d = config_.embed_dim;
  Tensor<T> out(numkit::Shape{inputs.size(), d});
  for (std::size_t begin = 0; begin < inputs.size(); begin += kInferenceChunk) {
    const auto chunk = inputs.subspan(begin, std::min(kInferenceChunk, inputs.size() - begin));
    Tape<T> tape;
    auto f = location_features(tape, tape.constant(position_matrix<T>(chunk, config_.input_width())));
    const auto values = tape.value(f).data();
    std::copy(values.begin(), values.end(), out.data().begin() + begin * d);
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::text_species_embeddings(const Tensor<T>& text_rows) const {
  for (auto v : text_rows.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite text embedding value");
  }
  Tape<T> tape;
  auto out = text_embedding(tape, tape.constant(text_rows));
  return tape.value(out);
}

template <typename T>
Tensor<T> Model<T>::text_species_embedding(std::span<const float> text) const {
  if (text.size() != config_.text_dim) {
    throw DimensionError("text embedding width " + std::to_string(text.size()) + ", model expects " +
                         std::to_string(config_.text_dim));
  }
  Tensor<T> row(numkit::Shape{1, text.size()}, std::vector<T>(text.begin(), text.end()));
  auto e = text_species_embeddings(row);
  return Tensor<T>(numkit::Shape{config_.embed_dim}, std::vector<T>(e.data().begin(), e.data().end()));
}

template <typename T>
std::vector<T> Model<T>::species_token(std::uint32_t id) const {
  const auto row = params_.get(param_names::kTokens).row(species_row(id));
  return {row.begin(), row.end()};
}

template <typename T>
bool Model<T>::operator==(const Model& other) const {
  if (!(config_ == other.config_) || params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name) return false;
    if (!numkit::bitwise_equal(params_[i].value, other.params_[i].value)) return false;
  }
  return true;
}

template <typename T>
T occurrence_probability(std::span<const T> loc_features, std::span<const T> species_vector) {
  if (loc_features.size() != species_vector.size()) {
    throw DimensionError("feature length " + std::to_string(loc_features.size()) + " vs species vector length " +
                         std::to_string(species_vector.size()));
  }
  for (std::size_t i = 0; i < loc_features.size(); ++i) {
    if (!std::isfinite(loc_features[i]) || !std::isfinite(species_vector[i])) {
      throw NumericError("non-finite input to occurrence probability");
    }
  }
  return sigmoid(numkit::kernels::dot<T>(loc_features, species_vector));
}

template class Model<float>;
template class Model<double>;
template Tensor<float> position_matrix(std::span<const geo::PositionInput>, std::uint32_t);
template Tensor<double> position_matrix(std::span<const geo::PositionInput>, std::uint32_t);
template float occurrence_probability(std::span<const float>, std::span<const float>);
template double occurrence_probability(std::span<const double>, std::span<const double>);
template float sigmoid(float);
template double sigmoid(double);

}  // namespace lesinr::model
