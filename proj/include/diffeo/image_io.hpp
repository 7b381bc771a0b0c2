#pragma once

#include <filesystem>
#include <vector>

#include "diffeo/interpolation.hpp"

namespace diffeo {

/// Load a square PNG (8 or 16 bit; gray, gray+alpha, RGB, RGBA or palette)
/// as float64 in [0, 1]. Alpha is dropped.
Image load_png(const std::filesystem::path& path);

/// Quantize to 8 or 16 bits after clamping to [0, 1]. 1 or 3 channels.
void save_png(const Image& image, const std::filesystem::path& path, int bit_depth = 8);

/// NPY image: shape (n, n) or (channels, n, n).
Image load_image_npy(const std::filesystem::path& path);
void save_image_npy(const Image& image, const std::filesystem::path& path);

/// Dispatch on extension (.png or .npy).
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

/// Image batch: shape (batch, channels, n, n) or (batch, n, n).
std::vector<Image> load_image_batch(const std::filesystem::path& path);
void save_image_batch(const std::vector<Image>& images, const std::filesystem::path& path);

}  // namespace diffeo
