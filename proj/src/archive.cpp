#include "maf/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "archive I/O writes host byte order and assumes little-endian");

namespace maf::archive {

namespace {

std::size_t dtype_size(const std::string& d) {
  if (d == "f32" || d == "i32") return 4;
  if (d == "u8") return 1;
  throw IoError("unknown dtype '" + d + "'");
}

std::size_t shape_count(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

template <class T>
Array pack(std::string dtype, std::vector<int> shape, const std::vector<T>& values) {
  if (values.size() != shape_count(shape)) throw IoError("array size does not match shape");
  Array a{std::move(dtype), std::move(shape), {}};
  a.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), a.bytes.size());
  return a;
}

template <class T>
std::vector<T> unpack(const Array& a, const char* want) {
  if (a.dtype != want) throw IoError("array dtype " + a.dtype + ", expected " + want);
  std::vector<T> out(a.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
  return out;
}

}  // namespace

std::size_t Array::count() const { return shape_count(shape); }
std::vector<float> Array::as_f32() const { return unpack<float>(*this, "f32"); }
std::vector<std::int32_t> Array::as_i32() const { return unpack<std::int32_t>(*this, "i32"); }
std::vector<std::uint8_t> Array::as_u8() const { return unpack<std::uint8_t>(*this, "u8"); }

Array f32(std::vector<int> shape, const std::vector<float>& values) {
  return pack("f32", std::move(shape), values);
}
Array f32_from(std::vector<int> shape, const std::vector<double>& values) {
  return pack("f32", std::move(shape), std::vector<float>(values.begin(), values.end()));
}
Array i32(std::vector<int> shape, const std::vector<std::int32_t>& values) {
  return pack("i32", std::move(shape), values);
}
Array u8(std::vector<int> shape, const std::vector<std::uint8_t>& values) {
  return pack("u8", std::move(shape), values);
}

const Array& Record::get(const std::string& name) const {
  for (const auto& [n, a] : arrays)
    if (n == name) return a;
  throw IoError("record has no array '" + name + "'");
}

void write(std::ostream& os, const Record& rec) {
  nlohmann::json h = rec.header;
  h["arrays"] = nlohmann::json::array();
  for (const auto& [name, a] : rec.arrays)
    h["arrays"].push_back({{"name", name}, {"dtype", a.dtype}, {"shape", a.shape}});
  const std::string text = h.dump();
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, a] : rec.arrays)
    os.write(reinterpret_cast<const char*>(a.bytes.data()),
             static_cast<std::streamsize>(a.bytes.size()));
  if (!os) throw IoError("write failed");
}

Record read(std::istream& is) {
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof(len))) throw IoError("truncated header");
  if (len > (1ull << 30)) throw IoError("implausible header length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated header");
  Record rec;
  try {
    rec.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad header json: ") + e.what());
  }
  for (const auto& spec : rec.header.at("arrays")) {
    Array a;
    a.dtype = spec.at("dtype").get<std::string>();
    a.shape = spec.at("shape").get<std::vector<int>>();
    a.bytes.resize(a.count() * dtype_size(a.dtype));
    if (!is.read(reinterpret_cast<char*>(a.bytes.data()),
                 static_cast<std::streamsize>(a.bytes.size())))
      throw IoError("truncated array '" + spec.at("name").get<std::string>() + "'");
    rec.arrays.emplace_back(spec.at("name").get<std::string>(), std::move(a));
  }
  return rec;
}

void write_file(const std::filesystem::path& path, const Record& rec) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  try {
    write(os, rec);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Record read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  try {
    return read(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace maf::archive
