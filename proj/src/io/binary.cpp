#include "lesinr/io/binary.hpp"

#include <fstream>
#include <limits>
#include <sstream>

namespace lesinr::io {

void ByteWriter::put_string16(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ConfigError("string too long for u16 length prefix: " + std::to_string(s.size()));
  }
  put(static_cast<std::uint16_t>(s.size()));
  bytes_.append(s);
}

void ByteWriter::put_string32(std::string_view s) {
  put(static_cast<std::uint32_t>(s.size()));
  bytes_.append(s);
}

void ByteReader::expect_magic(std::string_view m, std::string_view what) {
  require(m.size());
  if (bytes_.substr(pos_, m.size()) != m) {
    throw FormatError("bad magic for " + std::string(what) + ", expected '" + std::string(m) + "'",
                      pos_);
  }
  pos_ += m.size();
}

std::string ByteReader::get_string16() {
  auto n = get<std::uint16_t>();
  require(n);
  std::string s(bytes_.substr(pos_, n));
  pos_ += n;
  return s;
}

std::string ByteReader::get_string32() {
  auto n = get<std::uint32_t>();
  require(n);
  std::string s(bytes_.substr(pos_, n));
  pos_ += n;
  return s;
}

void ByteReader::seek(std::size_t pos) {
  if (pos > bytes_.size()) throw FormatError("seek past end of data", pos);
  pos_ = pos;
}

void ByteReader::require(std::size_t n) const {
  if (n > bytes_.size() - pos_) {
    throw FormatError("truncated data: need " + std::to_string(n) + " bytes, have " +
                          std::to_string(bytes_.size() - pos_),
                      pos_);
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace lesinr::io
