#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lesinr/geo.hpp"

namespace lesinr::data {

enum class TextKind : std::uint8_t { section = 0, habitat_summary = 1, range_summary = 2 };

const char* kind_name(TextKind kind);
TextKind parse_kind(std::string_view name);

struct TextEmbeddingRecord {
  std::uint32_t species_id = 0;
  std::uint32_t section_id = 0;
  TextKind kind = TextKind::section;
  std::vector<float> vector;

  bool operator==(const TextEmbeddingRecord&) const = default;
};

// Immutable collection of text embeddings of one width, indexed by species.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  // Throws FormatError on duplicate (species, section) pairs, NumericError on
  // non-finite values, DimensionError on width mismatch.
  EmbeddingStore(std::uint32_t dim, std::vector<TextEmbeddingRecord> records);

  std::uint32_t dim() const { return dim_; }
  const std::vector<TextEmbeddingRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  bool has_sections(std::uint32_t species_id) const;
  // Sections of one species, in file order.
  const std::vector<std::size_t>& sections(std::uint32_t species_id) const;
  // First record of the given kind for a species, if any.
  const TextEmbeddingRecord* find(std::uint32_t species_id, TextKind kind) const;

  std::string serialize() const;
  static EmbeddingStore deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static EmbeddingStore load(const std::filesystem::path& path);

  bool operator==(const EmbeddingStore& other) const { return dim_ == other.dim_ && records_ == other.records_; }

 private:
  std::uint32_t dim_ = 0;
  std::vector<TextEmbeddingRecord> records_;
  std::unordered_map<std::uint32_t, std::vector<std::size_t>> sections_;
};

// Uniform draw among the species' section records; nullptr when it has none.
const TextEmbeddingRecord* sample_section(const EmbeddingStore& store, std::uint32_t species_id, Rng& rng);

}  // namespace lesinr::data
