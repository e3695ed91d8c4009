#include <cmath>

#include "lesinr/io/binary.hpp"
#include "lesinr/model.hpp"

namespace lesinr::model {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

struct TableEntry {
  std::string name;
  std::uint8_t dtype = kDtypeF32;
  numkit::Shape shape;
  std::uint64_t offset = 0;
};

template <typename T>
constexpr std::uint8_t dtype_of() {
  return std::is_same_v<T, float> ? kDtypeF32 : kDtypeF64;
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const Model<T>& model) {
  const auto& params = model.params();
  io::ByteWriter head;
  head.magic("LESM");
  head.put(kCheckpointVersion);
  head.put_string32(model.config().to_json());
  head.put(static_cast<std::uint32_t>(params.size()));

  // Table size is known up front, so payload offsets can be absolute.
  std::size_t table_bytes = 0;
  for (const auto& p : params) table_bytes += 2 + p.name.size() + 1 + 1 + 8 * p.value.rank() + 8;
  std::uint64_t offset = head.size() + table_bytes;

  io::ByteWriter table;
  for (const auto& p : params) {
    table.put_string16(p.name);
    table.put(dtype_of<T>());
    table.put(static_cast<std::uint8_t>(p.value.rank()));
    for (auto e : p.value.shape()) table.put(static_cast<std::uint64_t>(e));
    table.put(offset);
    offset += p.value.data().size_bytes();
  }

  io::ByteWriter payload;
  for (const auto& p : params) payload.put_all<T>(p.value.data());

  std::string out = std::move(head.bytes());
  out += table.bytes();
  out += payload.bytes();
  return out;
}

template <typename T>
Model<T> deserialize_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LESM", "checkpoint");
  const auto version_at = r.offset();
  if (auto v = r.get<std::uint16_t>(); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  const auto config_at = r.offset();
  ModelConfig config;
  try {
    config = ModelConfig::from_json(r.get_string32());
  } catch (const FormatError& e) {
    throw FormatError(e.what(), config_at);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), config_at);
  }
  config.precision = numkit::precision_of<T>();

  const auto count = r.get<std::uint32_t>();
  std::vector<TableEntry> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    TableEntry e;
    e.name = r.get_string16();
    const auto dtype_at = r.offset();
    e.dtype = r.get<std::uint8_t>();
    if (e.dtype != kDtypeF32 && e.dtype != kDtypeF64) {
      throw FormatError("unknown dtype " + std::to_string(e.dtype) + " for tensor '" + e.name + "'", dtype_at);
    }
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto extent_at = r.offset();
      const auto extent = r.get<std::uint64_t>();
      if (extent == 0 || extent > (1ull << 40)) {
        throw FormatError("invalid extent for tensor '" + e.name + "'", extent_at);
      }
      e.shape.push_back(static_cast<std::size_t>(extent));
    }
    e.offset = r.get<std::uint64_t>();
    table.push_back(std::move(e));
  }

  numkit::ParameterSet<T> params;
  for (const auto& e : table) {
    const std::size_t n = numkit::shape_size(e.shape);
    io::ByteReader payload(bytes);
    payload.seek(e.offset);
    std::vector<T> data(n);
    if (e.dtype == dtype_of<T>()) {
      payload.get_all<T>(data);
    } else if (e.dtype == kDtypeF32) {
      std::vector<float> raw(n);
      payload.get_all<float>(raw);
      std::copy(raw.begin(), raw.end(), data.begin());
    } else {
      std::vector<double> raw(n);
      payload.get_all<double>(raw);
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(raw[i]);
    }
    for (auto v : data) {
      if (!std::isfinite(v)) throw FormatError("non-finite value in tensor '" + e.name + "'", e.offset);
    }
    params.add(e.name, Tensor<T>(e.shape, std::move(data)));
  }
  try {
    return Model<T>(std::move(config), std::move(params));
  } catch (const LookupError& e) {
    throw FormatError(std::string("incomplete checkpoint: ") + e.what(), r.offset());
  } catch (const DimensionError& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what(), r.offset());
  }
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_checkpoint(model));
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(io::read_file(path));
}

template std::string serialize_checkpoint(const Model<float>&);
template std::string serialize_checkpoint(const Model<double>&);
template Model<float> deserialize_checkpoint(std::string_view);
template Model<double> deserialize_checkpoint(std::string_view);
template void save_checkpoint(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint(const Model<double>&, const std::filesystem::path&);
template Model<float> load_checkpoint(const std::filesystem::path&);
template Model<double> load_checkpoint(const std::filesystem::path&);

}  // namespace lesinr::model
