#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rblod {

// Raw little-endian float64 array: 8-byte magic, dimension count, extents,
// then the payload in row-major order.
struct Array {
  std::vector<std::uint64_t> extents;
  std::vector<double> data;

  std::uint64_t element_count() const;
};

inline constexpr char kArrayMagic[8] = {'R', 'B', 'L', 'O', 'D', 'A', 'R', '1'};

void write_array(const std::filesystem::path& path, const Array& array);
Array read_array(const std::filesystem::path& path);

}  // namespace rblod
