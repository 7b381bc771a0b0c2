#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffeo/diffeo_core.hpp"

namespace diffeo {

/// Square multi-channel raster, channels-first, float64.
///
/// Pixel (row, col) of channel ch lives at data[(ch * n + row) * n + col].
/// All values are finite; the factory functions enforce it.
class Image {
public:
    Image() = default;
    Image(int channels, int n, std::vector<double> data);
    static Image filled(int channels, int n, double value);

    int n() const noexcept { return n_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(n_) * n_; }

    double at(int ch, int row, int col) const noexcept { return data_[index(ch, row, col)]; }
    void set(int ch, int row, int col, double v);

    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> plane(int ch) const noexcept {
        return std::span<const double>(data_).subspan(static_cast<std::size_t>(ch) * plane_size(), plane_size());
    }

    /// Advisory (min, max) of the source encoding; [0, 1] for PNG input.
    std::pair<double, double> value_range() const noexcept { return value_range_; }
    void set_value_range(std::pair<double, double> r) noexcept { value_range_ = r; }

private:
    std::size_t index(int ch, int row, int col) const noexcept {
        return (static_cast<std::size_t>(ch) * n_ + row) * n_ + col;
    }

    int channels_ = 0;
    int n_ = 0;
    std::vector<double> data_;
    std::pair<double, double> value_range_{0.0, 1.0};
};

/// Width that makes the Gaussian participation ratio match bilinear (~4).
inline constexpr double kDefaultGaussianSigma = 0.4715;

struct InterpolationKind {
    enum class Method { Bilinear, Gaussian };

    Method method = Method::Bilinear;
    double sigma = kDefaultGaussianSigma;  // pixels; used by Gaussian only

    static InterpolationKind bilinear() { return {}; }
    static InterpolationKind gaussian(double sigma = kDefaultGaussianSigma);

    bool is_gaussian() const noexcept { return method == Method::Gaussian; }
    void validate() const;
};

const char* to_string(InterpolationKind::Method m) noexcept;
InterpolationKind::Method parse_method(const std::string& name);

/// Half-width in pixels of the truncated Gaussian window: ceil(7 sigma).
/// Excluded points carry less than 1e-10 of the peak weight.
int gaussian_radius(double sigma);

/// [tau x](s) = x(s - tau(s)), resampled at pixel centers.
///
/// Source positions outside the image clamp to the border. Every channel
/// uses the same source positions and weights.
Image apply_diffeo(const Image& image, const DisplacementGrid& grid, const InterpolationKind& kind);

/// The Gaussian interpolation of the undeformed image (the smoothed baseline).
Image gaussian_smooth(const Image& image, double sigma);

/// Reference image that deformed outputs must be compared against:
/// the image itself for bilinear, its smoothed version for Gaussian.
Image interpolation_baseline(const Image& image, const InterpolationKind& kind);

/// (sum Psi^2)^2 / sum Psi^4 with Psi the Gaussian evaluated from the cell
/// center (1/2, 1/2) to every lattice point.
double participation_ratio(double sigma);

}  // namespace diffeo
