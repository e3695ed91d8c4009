#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lesinr/geo.hpp"
#include "lesinr/numkit/adam.hpp"
#include "lesinr/numkit/tape.hpp"

namespace lesinr::model {

using numkit::Precision;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

struct ModelConfig {
  std::uint32_t env_channels = 0;
  std::uint32_t residual_blocks = 4;
  std::uint32_t embed_dim = 256;  // location encoder width and species vector width
  std::uint32_t text_dim = 4096;
  std::uint32_t text_hidden = 512;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  // Training species, one token-table row each, in row order.
  std::vector<std::uint32_t> species_ids;

  std::uint32_t input_width() const { return 4 + env_channels; }
  // Throws ConfigError on zero widths or duplicate species ids.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

// Names of the trainable tensors.
namespace param_names {
inline constexpr const char* kTokens = "species.tokens";
std::string loc_input_weight();
std::string loc_input_bias();
std::string loc_block(std::uint32_t block, int layer, bool bias);
std::string text_layer(int layer, bool bias);
}  // namespace param_names

// Location encoder f, species token table E and text head g.
//
//   f(x) = h_R,  h_0 = x W_in + b_in,
//   h_{r+1} = h_r + relu(relu(h_r W1 + b1) W2 + b2)
//   g(t) = relu(relu(t A1 + c1) A2 + c2) A3 + c3
//
// Location features carry no final nonlinearity, so the dot-product head sees
// signed features.
template <typename T>
class Model {
 public:
  // Seeded initialisation: affine weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  // zero biases, token rows N(0, 0.02^2).
  static Model initialize(ModelConfig config);
  Model(ModelConfig config, numkit::ParameterSet<T> params);

  const ModelConfig& config() const { return config_; }
  numkit::ParameterSet<T>& params() { return params_; }
  const numkit::ParameterSet<T>& params() const { return params_; }

  std::size_t species_count() const { return config_.species_ids.size(); }
  bool has_species(std::uint32_t id) const { return rows_.contains(id); }
  // Token-table row of a training species; LookupError otherwise.
  std::size_t species_row(std::uint32_t id) const;

  // Recorded forward passes.
  Var location_features(Tape<T>& tape, Var inputs) const;  // [B, 4+C] -> [B, D]
  Var text_embedding(Tape<T>& tape, Var text) const;       // [K, text_dim] -> [K, D]
  Var token_table(Tape<T>& tape) const;                    // [S, D]

  // Inference helpers; no gradients, evaluated in chunks.
  Tensor<T> location_features(std::span<const geo::PositionInput> inputs) const;
  Tensor<T> text_species_embedding(std::span<const float> text) const;
  Tensor<T> text_species_embeddings(const Tensor<T>& text_rows) const;
  std::vector<T> species_token(std::uint32_t id) const;

  bool operator==(const Model& other) const;

 private:
  ModelConfig config_;
  numkit::ParameterSet<T> params_;
  std::unordered_map<std::uint32_t, std::size_t> rows_;
};

// Stacks encoded positions into a [B, width] matrix.
template <typename T>
Tensor<T> position_matrix(std::span<const geo::PositionInput> inputs, std::uint32_t width);

// sigma(loc . species). DimensionError on length mismatch, NumericError on
// non-finite input.
template <typename T>
T occurrence_probability(std::span<const T> loc_features, std::span<const T> species_vector);

template <typename T>
T sigmoid(T z);

// Checkpoint file: "LESM", u16 version, u32-length JSON config, tensor table
// (name, dtype, rank, extents, absolute byte offset), raw little-endian payloads.
template <typename T>
std::string serialize_checkpoint(const Model<T>& model);
template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path);
// Loads at precision T; tensors stored at the other width are converted.
template <typename T>
Model<T> deserialize_checkpoint(std::string_view bytes);
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace lesinr::model
