#pragma once

// Binary record layout shared by every on-disk artifact:
//   u64 little-endian header length | JSON header | raw little-endian arrays
// The header's "arrays" list gives name, dtype (f32, i32, u8) and shape in
// payload order.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace maf::archive {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Array {
  std::string dtype;  // "f32", "i32", "u8"
  std::vector<int> shape;
  std::vector<std::uint8_t> bytes;

  std::size_t count() const;
  std::vector<float> as_f32() const;
  std::vector<std::int32_t> as_i32() const;
  std::vector<std::uint8_t> as_u8() const;
};

Array f32(std::vector<int> shape, const std::vector<float>& values);
Array f32_from(std::vector<int> shape, const std::vector<double>& values);
Array i32(std::vector<int> shape, const std::vector<std::int32_t>& values);
Array u8(std::vector<int> shape, const std::vector<std::uint8_t>& values);

struct Record {
  nlohmann::json header;  // user fields; "arrays" is filled on write
  std::vector<std::pair<std::string, Array>> arrays;

  const Array& get(const std::string& name) const;
  void add(std::string name, Array a) { arrays.emplace_back(std::move(name), std::move(a)); }
};

void write(std::ostream& os, const Record& rec);
Record read(std::istream& is);

void write_file(const std::filesystem::path& path, const Record& rec);
Record read_file(const std::filesystem::path& path);

/// Whole-file byte comparison helper used by determinism checks.
std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path);

/// FNV-1a 64 over bytes, hex encoded.
std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace maf::archive
