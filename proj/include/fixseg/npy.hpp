#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fixseg::npy {

// Minimal reader/writer for the NumPy .npy container (format versions 1.0-3.0, little-endian,
// C order). Patches are stored as float32 [bands, H, W]; label maps as int32 [H, W].

template <typename T>
struct Array {
  std::vector<std::int64_t> shape;
  std::vector<T> values;
};

/// Reads any real-valued dtype (f4, f8) and converts to float.
Array<float> read_float(const std::filesystem::path& path);

/// Reads any integer dtype (i1, u1, i2, u2, i4, i8) and converts to int32.
Array<std::int32_t> read_int(const std::filesystem::path& path);

void write(const std::filesystem::path& path, const std::vector<std::int64_t>& shape, const std::vector<float>& values);
void write(const std::filesystem::path& path, const std::vector<std::int64_t>& shape,
           const std::vector<std::int32_t>& values);

}  // namespace fixseg::npy
