#include "rblod/array_io.hpp"

#include "rblod/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rblod {

namespace {

static_assert(sizeof(double) == 8);

template <class T>
T to_little_endian(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

void put_u64(std::ofstream& out, std::uint64_t value) {
  value = to_little_endian(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

std::uint64_t get_u64(std::ifstream& in, const std::filesystem::path& path) {
  std::uint64_t value = 0;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(value))) {
    throw FormatError("truncated array header in " + path.string());
  }
  return to_little_endian(value);
}

}  // namespace

std::uint64_t Array::element_count() const {
  std::uint64_t count = 1;
  for (auto e : extents) count *= e;
  return count;
}

void write_array(const std::filesystem::path& path, const Array& array) {
  if (array.element_count() != array.data.size()) throw std::invalid_argument("array extents do not match payload");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kArrayMagic, sizeof(kArrayMagic));
  put_u64(out, array.extents.size());
  for (auto e : array.extents) put_u64(out, e);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(array.data.data()), static_cast<std::streamsize>(array.data.size() * 8));
  } else {
    for (double v : array.data) {
      const double le = to_little_endian(v);
      out.write(reinterpret_cast<const char*>(&le), 8);
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

Array read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open array file " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kArrayMagic, 8) != 0) {
    throw FormatError("bad magic in " + path.string());
  }
  const std::uint64_t ndim = get_u64(in, path);
  if (ndim > 16) throw FormatError("implausible dimension count in " + path.string());
  Array array;
  for (std::uint64_t i = 0; i < ndim; ++i) array.extents.push_back(get_u64(in, path));

  const auto header = static_cast<std::uint64_t>(8 + 8 * (1 + ndim));
  const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(path));
  std::uint64_t count = 1;
  for (auto e : array.extents) {
    if (e != 0 && count > (file_size / 8) / e + 1) throw FormatError("extents exceed file size in " + path.string());
    count *= e;
  }
  if (file_size < header || (file_size - header) != count * 8) {
    throw FormatError("payload length does not match extents in " + path.string());
  }
  array.data.resize(count);
  in.read(reinterpret_cast<char*>(array.data.data()), static_cast<std::streamsize>(count * 8));
  if (!in) throw FormatError("truncated payload in " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (double& v : array.data) v = to_little_endian(v);
  }
  return array;
}

}  // namespace rblod
