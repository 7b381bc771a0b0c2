#include "diffeo/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "diffeo/errors.hpp"
#include "diffeo/fileutil.hpp"
#include "diffeo/npy.hpp"

namespace diffeo {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngError {
    char message[256] = {};
};

void png_error_to_buffer(png_structp png, png_const_charp msg) {
    auto* err = static_cast<PngError*>(png_get_error_ptr(png));
    std::snprintf(err->message, sizeof err->message, "%s", msg);
    png_longjmp(png, 1);
}
void png_silent_warning(png_structp, png_const_charp) {}

struct RawPng {
    png_uint_32 width = 0, height = 0;
    int depth = 0, channels = 0;
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
};

// libpng reports errors by longjmp; keep this frame free of non-trivial locals.
bool read_png_raw(std::FILE* fp, RawPng& out, PngError& err) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_to_buffer, png_silent_warning);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    out.width = png_get_image_width(png, info);
    out.height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.depth = png_get_bit_depth(png, info);
    out.channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    out.pixels.resize(rowbytes * out.height);
    out.rows.resize(out.height);
    for (png_uint_32 r = 0; r < out.height; ++r) out.rows[r] = out.pixels.data() + r * rowbytes;
    png_read_image(png, out.rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

bool write_png_raw(std::FILE* fp, png_uint_32 n, int depth, int channels, const std::vector<png_bytep>& rows,
                   PngError& err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_to_buffer, png_silent_warning);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, n, n, depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

std::string lower_ext(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

Image load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());
    RawPng raw;
    PngError err;
    if (!read_png_raw(fp.get(), raw, err)) throw DataError(path.string() + ": " + err.message);
    if (raw.width != raw.height)
        throw DataError(path.string() + ": image is " + std::to_string(raw.width) + "x" + std::to_string(raw.height) +
                        ", only square images are supported");

    const int n = static_cast<int>(raw.width);
    const int channels = raw.channels;
    const double scale = raw.depth == 16 ? 65535.0 : 255.0;
    std::vector<double> data(static_cast<std::size_t>(channels) * n * n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                const std::size_t k = static_cast<std::size_t>(c) * channels + ch;
                const double v = raw.depth == 16 ? static_cast<double>((raw.rows[r][2 * k] << 8) | raw.rows[r][2 * k + 1])
                                                 : static_cast<double>(raw.rows[r][k]);
                data[(static_cast<std::size_t>(ch) * n + r) * n + c] = v / scale;
            }
        }
    }
    Image img(channels, n, std::move(data));
    img.set_value_range({0.0, 1.0});
    return img;
}

void save_png(const Image& image, const std::filesystem::path& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw ParameterError("PNG bit depth must be 8 or 16");
    if (image.channels() != 1 && image.channels() != 3)
        throw ParameterError("PNG export needs 1 or 3 channels, got " + std::to_string(image.channels()));
    const int n = image.n();
    const int channels = image.channels();
    const int bytes = bit_depth / 8;
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    const std::size_t stride = static_cast<std::size_t>(n) * channels * bytes;
    std::vector<png_byte> buf(stride * n);
    std::vector<png_bytep> rows(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        rows[r] = buf.data() + r * stride;
        for (int c = 0; c < n; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                const auto q = static_cast<unsigned>(std::lround(std::clamp(image.at(ch, r, c), 0.0, 1.0) * scale));
                png_byte* dst = rows[r] + (static_cast<std::size_t>(c) * channels + ch) * bytes;
                if (bytes == 2) {
                    dst[0] = static_cast<png_byte>(q >> 8);
                    dst[1] = static_cast<png_byte>(q & 0xFF);
                } else {
                    dst[0] = static_cast<png_byte>(q);
                }
            }
        }
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    PngError err;
    bool ok;
    {
        FilePtr fp(std::fopen(tmp.string().c_str(), "wb"));
        if (!fp) throw DataError("cannot write " + tmp.string());
        ok = write_png_raw(fp.get(), static_cast<png_uint_32>(n), bit_depth, channels, rows, err);
    }
    if (!ok) {
        std::filesystem::remove(tmp);
        throw DataError(path.string() + ": " + err.message);
    }
    std::filesystem::rename(tmp, path);
}

Image load_image_npy(const std::filesystem::path& path) {
    auto arr = npy::load(path);
    if (arr.shape.size() == 2 && arr.shape[0] == arr.shape[1])
        return Image(1, static_cast<int>(arr.shape[0]), std::move(arr.data));
    if (arr.shape.size() == 3 && arr.shape[1] == arr.shape[2])
        return Image(static_cast<int>(arr.shape[0]), static_cast<int>(arr.shape[1]), std::move(arr.data));
    throw DataError(path.string() + ": expected shape (n, n) or (channels, n, n)");
}

void save_image_npy(const Image& image, const std::filesystem::path& path) {
    const std::size_t shape[] = {static_cast<std::size_t>(image.channels()), static_cast<std::size_t>(image.n()),
                                 static_cast<std::size_t>(image.n())};
    npy::save(path, image.data(), shape);
}

Image load_image(const std::filesystem::path& path) {
    const auto ext = lower_ext(path);
    if (ext == ".png") return load_png(path);
    if (ext == ".npy") return load_image_npy(path);
    throw DataError(path.string() + ": unsupported image format (use .png or .npy)");
}

void save_image(const Image& image, const std::filesystem::path& path) {
    const auto ext = lower_ext(path);
    if (ext == ".png") return save_png(image, path);
    if (ext == ".npy") return save_image_npy(image, path);
    throw DataError(path.string() + ": unsupported image format (use .png or .npy)");
}

std::vector<Image> load_image_batch(const std::filesystem::path& path) {
    auto arr = npy::load(path);
    std::size_t batch, channels, n;
    if (arr.shape.size() == 4 && arr.shape[2] == arr.shape[3]) {
        batch = arr.shape[0];
        channels = arr.shape[1];
        n = arr.shape[2];
    } else if (arr.shape.size() == 3 && arr.shape[1] == arr.shape[2]) {
        batch = arr.shape[0];
        channels = 1;
        n = arr.shape[1];
    } else {
        throw DataError(path.string() + ": expected shape (batch, channels, n, n) or (batch, n, n)");
    }
    const std::size_t per = channels * n * n;
    std::vector<Image> out;
    out.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b)
        out.emplace_back(static_cast<int>(channels), static_cast<int>(n),
                         std::vector<double>(arr.data.begin() + static_cast<std::ptrdiff_t>(b * per),
                                             arr.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * per)));
    return out;
}

void save_image_batch(const std::vector<Image>& images, const std::filesystem::path& path) {
    if (images.empty()) throw ParameterError("cannot save an empty image batch");
    const auto& first = images.front();
    std::vector<double> data;
    data.reserve(images.size() * first.size());
    for (const auto& img : images) {
        if (img.n() != first.n() || img.channels() != first.channels())
            throw ParameterError("image batch members must share shape");
        data.insert(data.end(), img.data().begin(), img.data().end());
    }
    const std::size_t shape[] = {images.size(), static_cast<std::size_t>(first.channels()),
                                 static_cast<std::size_t>(first.n()), static_cast<std::size_t>(first.n())};
    npy::save(path, data, shape);
}

}  // namespace diffeo
