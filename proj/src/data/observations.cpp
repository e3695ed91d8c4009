#include "lesinr/data/observations.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "lesinr/io/binary.hpp"

namespace lesinr::data {

namespace {

constexpr std::uint16_t kObservationVersion = 1;
constexpr std::size_t kRecordBytes = 12;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_field(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string shortest_float(float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

ObservationRecord make_observation(std::uint32_t species_id, const geo::GeoPoint& p) {
  // Rounding to f32 can push a longitude just past 180; rewrap after.
  const geo::GeoPoint q(static_cast<float>(p.lat()), static_cast<float>(p.lon()));
  return {species_id, static_cast<float>(q.lat()), static_cast<float>(q.lon())};
}

std::vector<ObservationRecord> parse_observations_csv(std::string_view text) {
  std::vector<ObservationRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "species_id,lat,lon") {
        throw FormatError("expected header 'species_id,lat,lon'", line_no);
      }
      header_seen = true;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    auto fail = [&](const std::string& why) {
      throw FormatError(why + " in observation row", line_no);
    };
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
      fail("expected 3 comma-separated fields");
    }
    std::uint32_t id = 0;
    float lat = 0, lon = 0;
    if (!parse_field(line.substr(0, c1), id)) fail("bad species_id");
    if (!parse_field(line.substr(c1 + 1, c2 - c1 - 1), lat) || !std::isfinite(lat)) fail("bad lat");
    if (!parse_field(line.substr(c2 + 1), lon) || !std::isfinite(lon)) fail("bad lon");
    if (lat < -90.0f || lat > 90.0f) fail("latitude out of range");
    out.push_back(make_observation(id, geo::GeoPoint(lat, lon)));
  }
  if (!header_seen) throw FormatError("observations file has no header", 1);
  return out;
}

std::string format_observations_csv(const std::vector<ObservationRecord>& records) {
  std::string out = "species_id,lat,lon\n";
  for (const auto& r : records) {
    out += std::to_string(r.species_id);
    out += ',';
    out += shortest_float(r.lat);
    out += ',';
    out += shortest_float(r.lon);
    out += '\n';
  }
  return out;
}

std::string serialize_observations(const std::vector<ObservationRecord>& records) {
  io::ByteWriter w;
  w.magic("LESO");
  w.put(kObservationVersion);
  w.put(static_cast<std::uint64_t>(records.size()));
  for (const auto& r : records) {
    w.put(r.species_id);
    w.put(r.lat);
    w.put(r.lon);
  }
  return std::move(w.bytes());
}

std::vector<ObservationRecord> deserialize_observations(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LESO", "observation");
  const auto version_at = r.offset();
  if (auto v = r.get<std::uint16_t>(); v != kObservationVersion) {
    throw FormatError("unsupported observation file version " + std::to_string(v), version_at);
  }
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / kRecordBytes) {
    throw FormatError("record count " + std::to_string(count) + " exceeds file size", r.offset());
  }
  std::vector<ObservationRecord> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    ObservationRecord rec;
    rec.species_id = r.get<std::uint32_t>();
    rec.lat = r.get<float>();
    rec.lon = r.get<float>();
    if (!(rec.lat >= -90.0f && rec.lat <= 90.0f) || !std::isfinite(rec.lon)) {
      throw FormatError("invalid coordinate in record " + std::to_string(i), at);
    }
    out.push_back(rec);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after observation records", r.offset());
  return out;
}

std::vector<ObservationRecord> read_observations(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.starts_with("LESO")) return deserialize_observations(bytes);
  return parse_observations_csv(bytes);
}

void write_observations(const std::filesystem::path& path, const std::vector<ObservationRecord>& records) {
  if (path.extension() == ".csv") {
    io::write_file_atomic(path, format_observations_csv(records));
  } else {
    io::write_file_atomic(path, serialize_observations(records));
  }
}

std::vector<std::uint32_t> DatasetManifest::training_species() const {
  std::vector<std::uint32_t> ids;
  for (const auto& [id, c] : per_species) {
    if (c.after_cap > 0) ids.push_back(id);
  }
  return ids;
}

std::string DatasetManifest::to_json() const {
  nlohmann::json j;
  j["species_count"] = species_count;
  j["observation_count"] = observation_count;
  j["cap"] = cap;
  j["min_count"] = min_count;
  j["held_out"] = held_out;
  auto& per = j["per_species"];
  per = nlohmann::json::array();
  for (const auto& [id, c] : per_species) {
    per.push_back({{"species_id", id}, {"before_cap", c.before_cap}, {"after_cap", c.after_cap}});
  }
  j["warnings"] = warnings;
  return j.dump(2);
}

ObservationSplit split_observations(const std::vector<ObservationRecord>& records, const LoadOptions& options) {
  if (options.cap == 0) throw ConfigError("observation cap must be positive");
  ObservationSplit split;
  auto& m = split.manifest;
  m.cap = options.cap;
  m.min_count = options.min_count;
  m.held_out.assign(options.held_out.begin(), options.held_out.end());

  std::map<std::uint32_t, std::vector<std::size_t>> by_species;
  std::set<std::uint32_t> held_seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto id = records[i].species_id;
    if (options.held_out.contains(id)) {
      held_seen.insert(id);
      split.held_out.push_back(records[i]);
    } else {
      by_species[id].push_back(i);
    }
  }
  for (auto id : options.held_out) {
    if (!held_seen.contains(id)) m.warnings.push_back("held-out species " + std::to_string(id) + " has no observations");
  }

  std::vector<std::uint8_t> keep(records.size(), 0);
  for (auto& [id, idx] : by_species) {
    auto& count = m.per_species[id];
    count.before_cap = idx.size();
    if (idx.size() < options.min_count) {
      m.warnings.push_back("species " + std::to_string(id) + " dropped: " + std::to_string(idx.size()) +
                           " observations < minimum " + std::to_string(options.min_count));
      continue;
    }
    if (idx.size() > options.cap) {
      std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32), id};
      Rng rng(seq);
      std::vector<std::size_t> chosen;
      chosen.reserve(options.cap);
      std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), options.cap, rng);
      idx = std::move(chosen);
    }
    count.after_cap = idx.size();
    for (auto i : idx) keep[i] = 1;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (keep[i]) split.train.push_back(records[i]);
  }
  m.observation_count = split.train.size();
  m.species_count = m.training_species().size();
  return split;
}

ObservationSplit load_observations(const std::filesystem::path& path, const LoadOptions& options) {
  return split_observations(read_observations(path), options);
}

}  // namespace lesinr::data
