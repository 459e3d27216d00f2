#include "fixseg/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <string>

#include "fixseg/error.hpp"

namespace fixseg::npy {
namespace {

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

struct Header {
  std::string descr;
  std::vector<std::int64_t> shape;
  std::size_t data_offset = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "\x93NUMPY", 6) != 0) {
    throw DataError(path.string() + ": not an .npy file");
  }
  const int major = static_cast<unsigned char>(magic[6]);
  std::uint32_t header_len = 0;
  if (major == 1) {
    std::uint16_t len16 = 0;
    in.read(reinterpret_cast<char*>(&len16), 2);
    header_len = len16;
  } else {
    in.read(reinterpret_cast<char*>(&header_len), 4);
  }
  std::string dict(header_len, '\0');
  if (!in.read(dict.data(), header_len)) throw DataError(path.string() + ": truncated .npy header");

  Header h;
  std::smatch m;
  if (!std::regex_search(dict, m, std::regex(R"('descr'\s*:\s*'([^']+)')"))) {
    throw DataError(path.string() + ": .npy header lacks descr");
  }
  h.descr = m[1];
  if (std::regex_search(dict, m, std::regex(R"('fortran_order'\s*:\s*True)"))) {
    throw DataError(path.string() + ": Fortran-ordered arrays are not supported");
  }
  if (!std::regex_search(dict, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    throw DataError(path.string() + ": .npy header lacks shape");
  }
  const std::string dims = m[1];
  const std::regex num(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it) {
    h.shape.push_back(std::stoll(it->str()));
  }
  h.data_offset = static_cast<std::size_t>(in.tellg());
  return h;
}

std::size_t element_count(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::int64_t b) { return a * static_cast<std::size_t>(b); });
}

template <typename Src, typename Dst>
std::vector<Dst> read_as(std::ifstream& in, std::size_t n, const std::filesystem::path& path) {
  std::vector<Src> raw(n);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(Src)))) {
    throw DataError(path.string() + ": truncated .npy payload");
  }
  return std::vector<Dst>(raw.begin(), raw.end());
}

std::string normalized_descr(std::string d) {
  // '|u1' and '<u1' are equivalent for single-byte types
  if (!d.empty() && (d[0] == '|' || d[0] == '=')) d[0] = '<';
  if (!d.empty() && d[0] == '>') throw DataError("big-endian .npy arrays are not supported");
  return d;
}

template <typename T>
void write_impl(const std::filesystem::path& path, const std::vector<std::int64_t>& shape, const std::vector<T>& values,
                const char* descr) {
  if (element_count(shape) != values.size()) throw ShapeMismatchError("npy write: shape/value count mismatch");
  std::string shape_str = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    shape_str += std::to_string(shape[i]);
    shape_str += (shape.size() == 1 || i + 1 < shape.size()) ? "," : "";
    if (i + 1 < shape.size()) shape_str += " ";
  }
  shape_str += ")";
  std::string dict = std::string("{'descr': '") + descr + "', 'fortran_order': False, 'shape': " + shape_str + ", }";
  // pad so that the payload starts on a 64-byte boundary
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(dict.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

Array<float> read_float(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const Header h = read_header(in, path);
  const std::size_t n = element_count(h.shape);
  const std::string d = normalized_descr(h.descr);
  Array<float> a{h.shape, {}};
  if (d == "<f4") {
    a.values = read_as<float, float>(in, n, path);
  } else if (d == "<f8") {
    a.values = read_as<double, float>(in, n, path);
  } else {
    throw DataError(path.string() + ": unsupported real dtype " + h.descr);
  }
  return a;
}

Array<std::int32_t> read_int(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const Header h = read_header(in, path);
  const std::size_t n = element_count(h.shape);
  const std::string d = normalized_descr(h.descr);
  Array<std::int32_t> a{h.shape, {}};
  if (d == "<i1") a.values = read_as<std::int8_t, std::int32_t>(in, n, path);
  else if (d == "<u1") a.values = read_as<std::uint8_t, std::int32_t>(in, n, path);
  else if (d == "<i2") a.values = read_as<std::int16_t, std::int32_t>(in, n, path);
  else if (d == "<u2") a.values = read_as<std::uint16_t, std::int32_t>(in, n, path);
  else if (d == "<i4") a.values = read_as<std::int32_t, std::int32_t>(in, n, path);
  else if (d == "<i8") a.values = read_as<std::int64_t, std::int32_t>(in, n, path);
  else throw DataError(path.string() + ": unsupported integer dtype " + h.descr);
  return a;
}

void write(const std::filesystem::path& path, const std::vector<std::int64_t>& shape, const std::vector<float>& values) {
  write_impl(path, shape, values, "<f4");
}

void write(const std::filesystem::path& path, const std::vector<std::int64_t>& shape,
           const std::vector<std::int32_t>& values) {
  write_impl(path, shape, values, "<i4");
}

}  // namespace fixseg::npy
