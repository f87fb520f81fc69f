#include "gnnopf/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "gnnopf/errors.hpp"

namespace gnnopf {

namespace {

constexpr std::size_t kMagicSize = 8;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("file is truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return value;
}

std::string padded_magic(std::string_view magic) {
  if (magic.size() > kMagicSize) throw ContractError("container magic longer than 8 bytes");
  std::string m(magic);
  m.resize(kMagicSize, '\0');
  return m;
}

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string encode_container(std::string_view magic, const BinaryContainer& c) {
  std::string out = padded_magic(magic);
  out.reserve(out.size() + 24 + c.header.size() + 8 * c.values.size());
  put_le<std::uint32_t>(out, c.version);
  put_le<std::uint64_t>(out, c.header.size());
  out.append(c.header);
  put_le<std::uint64_t>(out, c.values.size());
  for (double v : c.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  put_le<std::uint32_t>(out, crc32_of(out));
  return out;
}

BinaryContainer decode_container(std::string_view bytes, std::string_view magic,
                                 std::uint32_t max_version) {
  const std::string expected = padded_magic(magic);
  if (bytes.size() < kMagicSize || bytes.substr(0, kMagicSize) != expected) {
    throw FormatError("not a " + std::string(magic) + " file (bad magic)");
  }
  if (bytes.size() < kMagicSize + 4) throw FormatError("file is truncated");
  std::size_t pos = kMagicSize;
  BinaryContainer c;
  c.version = get_le<std::uint32_t>(bytes, pos);
  if (c.version == 0 || c.version > max_version) {
    throw FormatError("unsupported " + std::string(magic) + " version " +
                      std::to_string(c.version) + " (this build reads up to " +
                      std::to_string(max_version) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes, pos);
  if (header_len > bytes.size() - pos) throw FormatError("file is truncated");
  c.header.assign(bytes.substr(pos, header_len));
  pos += header_len;
  const auto count = get_le<std::uint64_t>(bytes, pos);
  if (count > (bytes.size() - pos) / 8) throw FormatError("file is truncated");
  c.values.resize(count);
  for (auto& v : c.values) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  const std::size_t body = pos;
  const auto stored = get_le<std::uint32_t>(bytes, pos);
  if (pos != bytes.size()) throw FormatError("trailing bytes after checksum");
  if (stored != crc32_of(bytes.substr(0, body))) throw FormatError("checksum mismatch");
  return c;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gnnopf
