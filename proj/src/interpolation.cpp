#include "diffeo/interpolation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "diffeo/errors.hpp"

namespace diffeo {

namespace {

void require_finite(std::span<const double> data, const char* what) {
    for (double v : data)
        if (!std::isfinite(v)) throw ParameterError(std::string(what) + " contains non-finite values");
}

// Clamp-to-edge source coordinate split into a cell index and a fraction.
// The last cell is [n-2, n-1], so an exact hit on n-1 becomes fraction 1.
struct CellCoord {
    int lo;
    double frac;
};

CellCoord locate(double x, int n) {
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    int lo = static_cast<int>(std::floor(x));
    lo = std::min(lo, n - 2);
    return {lo, x - lo};
}

// Normalized 1-D Gaussian weights over [first, first + w.size()), shifted by
// the nearest point's exponent so tiny sigmas do not underflow to 0/0.
int gaussian_weights_1d(double x, int n, double sigma, int radius, std::vector<double>& w) {
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    const int first = std::max(0, static_cast<int>(std::floor(x)) - radius);
    const int last = std::min(n - 1, static_cast<int>(std::ceil(x)) + radius);
    w.resize(static_cast<std::size_t>(last - first + 1));
    double min_d2 = std::numeric_limits<double>::infinity();
    for (int k = first; k <= last; ++k) min_d2 = std::min(min_d2, (k - x) * (k - x));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int k = first; k <= last; ++k) w[static_cast<std::size_t>(k - first)] = std::exp(-((k - x) * (k - x) - min_d2) * inv);
    return first;
}

}  // namespace

Image::Image(int channels, int n, std::vector<double> data)
    : channels_(channels), n_(n), data_(std::move(data)) {
    if (channels < 1) throw ParameterError("image needs at least one channel");
    if (n < 2) throw ParameterError("image side must be >= 2");
    if (data_.size() != static_cast<std::size_t>(channels) * n * n)
        throw ParameterError("image data size does not match channels x n x n");
    require_finite(data_, "image");
}

Image Image::filled(int channels, int n, double value) {
    return Image(channels, n, std::vector<double>(static_cast<std::size_t>(channels) * n * n, value));
}

void Image::set(int ch, int row, int col, double v) {
    if (!std::isfinite(v)) throw ParameterError("image values must be finite");
    data_[index(ch, row, col)] = v;
}

InterpolationKind InterpolationKind::gaussian(double sigma) {
    InterpolationKind k{Method::Gaussian, sigma};
    k.validate();
    return k;
}

void InterpolationKind::validate() const {
    if (method == Method::Gaussian && !(sigma > 0.0 && std::isfinite(sigma)))
        throw ParameterError("Gaussian sigma must be positive");
}

const char* to_string(InterpolationKind::Method m) noexcept {
    return m == InterpolationKind::Method::Gaussian ? "gaussian" : "bilinear";
}

InterpolationKind::Method parse_method(const std::string& name) {
    if (name == "bilinear") return InterpolationKind::Method::Bilinear;
    if (name == "gaussian") return InterpolationKind::Method::Gaussian;
    throw ParameterError("unknown interpolation '" + name + "' (expected bilinear or gaussian)");
}

int gaussian_radius(double sigma) { return static_cast<int>(std::ceil(7.0 * sigma)); }

Image apply_diffeo(const Image& image, const DisplacementGrid& grid, const InterpolationKind& kind) {
    kind.validate();
    const int n = image.n();
    if (grid.n != n)
        throw ParameterError("displacement grid is " + std::to_string(grid.n) + "x" + std::to_string(grid.n) +
                             " but image is " + std::to_string(n) + "x" + std::to_string(n));
    require_finite(image.data(), "image");

    const int channels = image.channels();
    std::vector<double> out(image.size());
    const std::size_t plane = image.plane_size();
    const auto src = image.data();

    if (!kind.is_gaussian()) {
        for (int row = 0; row < n; ++row) {
            for (int col = 0; col < n; ++col) {
                const double sx = col - n * grid.u_at(row, col);
                const double sy = row - n * grid.v_at(row, col);
                const auto cx = locate(sx, n);
                const auto cy = locate(sy, n);
                const double u = cx.frac, v = cy.frac;
                const double w00 = (1 - u) * (1 - v), w10 = u * (1 - v), w01 = (1 - u) * v, w11 = u * v;
                const std::size_t i00 = static_cast<std::size_t>(cy.lo) * n + cx.lo;
                const std::size_t i10 = i00 + 1, i01 = i00 + n, i11 = i00 + n + 1;
                const std::size_t dst = static_cast<std::size_t>(row) * n + col;
                for (int ch = 0; ch < channels; ++ch) {
                    const double* p = src.data() + ch * plane;
                    out[ch * plane + dst] = p[i00] * w00 + p[i10] * w10 + p[i01] * w01 + p[i11] * w11;
                }
            }
        }
    } else {
        const int radius = gaussian_radius(kind.sigma);
        std::vector<double> wx, wy;
        for (int row = 0; row < n; ++row) {
            for (int col = 0; col < n; ++col) {
                const double sx = col - n * grid.u_at(row, col);
                const double sy = row - n * grid.v_at(row, col);
                const int x0 = gaussian_weights_1d(sx, n, kind.sigma, radius, wx);
                const int y0 = gaussian_weights_1d(sy, n, kind.sigma, radius, wy);
                double norm = 0.0;
                for (double a : wy)
                    for (double b : wx) norm += a * b;
                const std::size_t dst = static_cast<std::size_t>(row) * n + col;
                for (int ch = 0; ch < channels; ++ch) {
                    const double* p = src.data() + ch * plane;
                    double acc = 0.0;
                    for (std::size_t iy = 0; iy < wy.size(); ++iy) {
                        const double* r = p + static_cast<std::size_t>(y0 + static_cast<int>(iy)) * n + x0;
                        double racc = 0.0;
                        for (std::size_t ix = 0; ix < wx.size(); ++ix) racc += r[ix] * wx[ix];
                        acc += wy[iy] * racc;
                    }
                    out[ch * plane + dst] = acc / norm;
                }
            }
        }
    }

    Image result(channels, n, std::move(out));
    result.set_value_range(image.value_range());
    return result;
}

Image gaussian_smooth(const Image& image, double sigma) {
    return apply_diffeo(image, DisplacementGrid::zeros(image.n()), InterpolationKind::gaussian(sigma));
}

Image interpolation_baseline(const Image& image, const InterpolationKind& kind) {
    return kind.is_gaussian() ? gaussian_smooth(image, kind.sigma) : image;
}

double participation_ratio(double sigma) {
    if (!(sigma > 0.0 && std::isfinite(sigma))) throw ParameterError("sigma must be positive");
    // Lattice points a in {-R+1, ..., R} per axis surround the center 1/2
    // symmetrically; grow R until the ratio settles.
    const double inv = 1.0 / (2.0 * sigma * sigma);
    auto ratio_for = [&](int radius) {
        double s2 = 0.0, s4 = 0.0;
        for (int a = -radius + 1; a <= radius; ++a) {
            for (int b = -radius + 1; b <= radius; ++b) {
                const double d2 = (a - 0.5) * (a - 0.5) + (b - 0.5) * (b - 0.5) - 0.5;
                const double psi = std::exp(-d2 * inv);
                s2 += psi * psi;
                s4 += psi * psi * psi * psi;
            }
        }
        return s2 * s2 / s4;
    };
    double prev = ratio_for(1);
    for (int radius = 2; radius < 4096; ++radius) {
        const double cur = ratio_for(radius);
        if (std::abs(cur - prev) < 1e-9) return cur;
        prev = cur;
    }
    return prev;
}

}  // namespace diffeo
