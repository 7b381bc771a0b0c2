#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace diffeo::npy {

/// A dense C-order float64 array as read from or written to a .npy file.
struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    std::size_t size() const noexcept;
};

/// Serialize to NPY v1.0 bytes: little-endian float64, C order.
///
/// The header is padded exactly as numpy.save does it, so files written
/// here are byte-identical to np.save on the same array.
std::string encode(std::span<const double> data, std::span<const std::size_t> shape);

/// Parse NPY bytes. Accepts <f8, <f4, |u1, <u2, <i4 and <i8 payloads and
/// converts them to float64; rejects Fortran order and big-endian data.
Array decode(const std::string& bytes, const std::string& what = "npy");

void save(const std::filesystem::path& path, std::span<const double> data,
          std::span<const std::size_t> shape);
void save(const std::filesystem::path& path, const Array& array);
Array load(const std::filesystem::path& path);

}  // namespace diffeo::npy
