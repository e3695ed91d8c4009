#include "lesinr/data/embeddings.hpp"

#include <cmath>
#include <set>

#include "lesinr/io/binary.hpp"

namespace lesinr::data {

namespace {

constexpr std::uint16_t kEmbeddingVersion = 1;
const std::vector<std::size_t> kNoSections;

}  // namespace

const char* kind_name(TextKind kind) {
  switch (kind) {
    case TextKind::section:
      return "section";
    case TextKind::habitat_summary:
      return "habitat_summary";
    case TextKind::range_summary:
      return "range_summary";
  }
  return "unknown";
}

TextKind parse_kind(std::string_view name) {
  if (name == "section") return TextKind::section;
  if (name == "habitat_summary" || name == "habitat") return TextKind::habitat_summary;
  if (name == "range_summary" || name == "range") return TextKind::range_summary;
  throw ConfigError("unknown text kind '" + std::string(name) + "'");
}

EmbeddingStore::EmbeddingStore(std::uint32_t dim, std::vector<TextEmbeddingRecord> records)
    : dim_(dim), records_(std::move(records)) {
  if (dim_ == 0) throw DimensionError("embedding width must be positive");
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.vector.size() != dim_) {
      throw DimensionError("embedding for species " + std::to_string(r.species_id) + " has width " +
                           std::to_string(r.vector.size()) + ", store width is " + std::to_string(dim_));
    }
    for (float v : r.vector) {
      if (!std::isfinite(v)) throw NumericError("non-finite embedding value for species " + std::to_string(r.species_id));
    }
    if (!seen.emplace(r.species_id, r.section_id).second) {
      throw FormatError("duplicate embedding (species " + std::to_string(r.species_id) + ", section " +
                        std::to_string(r.section_id) + ")");
    }
    if (r.kind == TextKind::section) sections_[r.species_id].push_back(i);
  }
}

bool EmbeddingStore::has_sections(std::uint32_t species_id) const { return sections_.contains(species_id); }

const std::vector<std::size_t>& EmbeddingStore::sections(std::uint32_t species_id) const {
  auto it = sections_.find(species_id);
  return it == sections_.end() ? kNoSections : it->second;
}

const TextEmbeddingRecord* EmbeddingStore::find(std::uint32_t species_id, TextKind kind) const {
  for (const auto& r : records_) {
    if (r.species_id == species_id && r.kind == kind) return &r;
  }
  return nullptr;
}

std::string EmbeddingStore::serialize() const {
  io::ByteWriter w;
  w.magic("LESE");
  w.put(kEmbeddingVersion);
  w.put(dim_);
  w.put(static_cast<std::uint64_t>(records_.size()));
  for (const auto& r : records_) {
    w.put(r.species_id);
    w.put(r.section_id);
    w.put(static_cast<std::uint8_t>(r.kind));
    w.put_all<float>(r.vector);
  }
  return std::move(w.bytes());
}

EmbeddingStore EmbeddingStore::deserialize(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LESE", "embedding");
  const auto version_at = r.offset();
  if (auto v = r.get<std::uint16_t>(); v != kEmbeddingVersion) {
    throw FormatError("unsupported embedding file version " + std::to_string(v), version_at);
  }
  const auto dim_at = r.offset();
  const auto dim = r.get<std::uint32_t>();
  if (dim == 0) throw FormatError("embedding width is zero", dim_at);
  const auto count = r.get<std::uint64_t>();
  const std::uint64_t record_bytes = 9 + std::uint64_t{dim} * 4;
  if (count > r.remaining() / record_bytes) {
    throw FormatError("record count " + std::to_string(count) + " exceeds file size", r.offset());
  }
  std::vector<TextEmbeddingRecord> records(count);
  for (auto& rec : records) {
    rec.species_id = r.get<std::uint32_t>();
    rec.section_id = r.get<std::uint32_t>();
    const auto kind_at = r.offset();
    const auto kind = r.get<std::uint8_t>();
    if (kind > 2) throw FormatError("unknown text kind " + std::to_string(kind), kind_at);
    rec.kind = static_cast<TextKind>(kind);
    rec.vector.resize(dim);
    r.get_all<float>(rec.vector);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after embedding records", r.offset());
  try {
    return EmbeddingStore(dim, std::move(records));
  } catch (const NumericError& e) {
    throw FormatError(e.what(), 0);
  }
}

void EmbeddingStore::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

const TextEmbeddingRecord* sample_section(const EmbeddingStore& store, std::uint32_t species_id, Rng& rng) {
  const auto& idx = store.sections(species_id);
  if (idx.empty()) return nullptr;
  if (idx.size() == 1) return &store.records()[idx[0]];
  std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
  return &store.records()[idx[pick(rng)]];
}

}  // namespace lesinr::data
