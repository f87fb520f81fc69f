#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gnnopf {

/// Versioned file container shared by datasets and checkpoints:
///   magic (8 bytes) | u32 version | u64 header length | header (JSON text)
///   | u64 value count | values (f64) | u32 CRC-32 of all preceding bytes.
/// Integers and doubles are little-endian.
struct BinaryContainer {
  std::uint32_t version = 0;
  std::string header;
  std::vector<double> values;
};

std::uint32_t crc32_of(std::string_view bytes);

std::string encode_container(std::string_view magic, const BinaryContainer& c);

/// Throws FormatError on wrong magic, unsupported version, truncation or a
/// checksum mismatch.
BinaryContainer decode_container(std::string_view bytes, std::string_view magic,
                                 std::uint32_t max_version);

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace gnnopf
