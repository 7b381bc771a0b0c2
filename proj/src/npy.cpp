#include "diffeo/npy.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <regex>

#include "diffeo/errors.hpp"
#include "diffeo/fileutil.hpp"

static_assert(std::endian::native == std::endian::little, "NPY payloads are written little-endian");

namespace diffeo::npy {

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::string shape_tuple(std::span<const std::size_t> shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += ", ";
        s += std::to_string(shape[i]);
    }
    if (shape.size() == 1) s += ",";
    s += ")";
    return s;
}

template <typename T>
void convert(const char* src, std::size_t count, std::vector<double>& out) {
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        T v;
        std::memcpy(&v, src + i * sizeof(T), sizeof(T));
        out[i] = static_cast<double>(v);
    }
}

}  // namespace

std::size_t Array::size() const noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string encode(std::span<const double> data, std::span<const std::size_t> shape) {
    const std::size_t count =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    if (count != data.size())
        throw ParameterError("npy: shape " + shape_tuple(shape) + " does not match " +
                             std::to_string(data.size()) + " elements");

    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape_tuple(shape) + ", }";
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
    const std::size_t unpadded = kMagicLen + 4 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');
    if (header.size() > 0xFFFF) throw ParameterError("npy: header too long");

    std::string out;
    out.reserve(kMagicLen + 4 + header.size() + data.size_bytes());
    out.append(kMagic, kMagicLen);
    out.push_back('\x01');
    out.push_back('\x00');
    out.push_back(static_cast<char>(header.size() & 0xFF));
    out.push_back(static_cast<char>(header.size() >> 8));
    out += header;
    out.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
    return out;
}

Array decode(const std::string& bytes, const std::string& what) {
    if (bytes.size() < kMagicLen + 4 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0)
        throw DataError(what + ": not an NPY file");
    const auto major = static_cast<unsigned char>(bytes[6]);
    std::size_t header_len = 0;
    std::size_t offset = 0;
    if (major == 1) {
        header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
        offset = 10;
    } else if (major == 2 || major == 3) {
        if (bytes.size() < 12) throw DataError(what + ": truncated NPY header");
        std::uint32_t len;
        std::memcpy(&len, bytes.data() + 8, 4);
        header_len = len;
        offset = 12;
    } else {
        throw DataError(what + ": unsupported NPY version " + std::to_string(major));
    }
    if (bytes.size() < offset + header_len) throw DataError(what + ": truncated NPY header");
    const std::string header = bytes.substr(offset, header_len);

    static const std::regex descr_re(R"('descr'\s*:\s*'([<>|=])([a-z])(\d+)')");
    static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
    std::smatch m;
    if (!std::regex_search(header, m, descr_re)) throw DataError(what + ": missing descr");
    const char endian = m[1].str()[0];
    const char kind = m[2].str()[0];
    const int width = std::stoi(m[3].str());
    if (!std::regex_search(header, m, order_re)) throw DataError(what + ": missing fortran_order");
    if (m[1] == "True") throw DataError(what + ": Fortran-ordered arrays are not supported");
    if (!std::regex_search(header, m, shape_re)) throw DataError(what + ": missing shape");

    Array arr;
    const std::string dims = m[1].str();
    static const std::regex int_re(R"(\d+)");
    for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re); it != std::sregex_iterator(); ++it)
        arr.shape.push_back(static_cast<std::size_t>(std::stoull(it->str())));

    if (endian == '>' && width > 1) throw DataError(what + ": big-endian payloads are not supported");
    const std::size_t count = arr.size();
    const std::size_t payload = offset + header_len;
    if (bytes.size() < payload + count * static_cast<std::size_t>(width))
        throw DataError(what + ": payload shorter than shape implies");
    const char* src = bytes.data() + payload;

    if (kind == 'f' && width == 8) convert<double>(src, count, arr.data);
    else if (kind == 'f' && width == 4) convert<float>(src, count, arr.data);
    else if (kind == 'u' && width == 1) convert<std::uint8_t>(src, count, arr.data);
    else if (kind == 'u' && width == 2) convert<std::uint16_t>(src, count, arr.data);
    else if (kind == 'i' && width == 4) convert<std::int32_t>(src, count, arr.data);
    else if (kind == 'i' && width == 8) convert<std::int64_t>(src, count, arr.data);
    else throw DataError(what + ": unsupported dtype " + std::string(1, kind) + std::to_string(width));
    return arr;
}

void save(const std::filesystem::path& path, std::span<const double> data,
          std::span<const std::size_t> shape) {
    write_file_atomic(path, encode(data, shape));
}

void save(const std::filesystem::path& path, const Array& array) {
    save(path, array.data, array.shape);
}

Array load(const std::filesystem::path& path) {
    return decode(read_file(path), path.filename().string());
}

}  // namespace diffeo::npy
