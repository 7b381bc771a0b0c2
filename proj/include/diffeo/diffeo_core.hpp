#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "diffeo/rng.hpp"

namespace diffeo {

/// Parameters of the maximum-entropy ensemble.
///
/// `n` is the number of pixels per side, `temperature` scales the variance of
/// every mode, `cutoff` keeps only modes with i^2 + j^2 <= cutoff^2.
struct DiffeoSpec {
    int n = 32;
    double temperature = 0.0;
    int cutoff = 3;
    std::uint64_t seed = 0;

    /// Throws ParameterError unless n >= 2, 1 <= cutoff <= n, T >= 0 and finite.
    void validate() const;
};

/// Sine-series coefficients of both displacement components.
///
/// Stored densely as cutoff x cutoff row-major matrices; entry (i-1, j-1)
/// holds the coefficient of sin(i pi u) sin(j pi v). Entries outside the
/// cutoff disk are exactly zero.
class DiffeoField {
public:
    DiffeoField() = default;
    /// Zero field for `spec`.
    explicit DiffeoField(const DiffeoSpec& spec);
    DiffeoField(const DiffeoSpec& spec, std::vector<double> c_coeffs, std::vector<double> d_coeffs);

    const DiffeoSpec& spec() const noexcept { return spec_; }
    int cutoff() const noexcept { return spec_.cutoff; }

    // 1-based mode indices, matching the series.
    double c(int i, int j) const noexcept { return c_[index(i, j)]; }
    double d(int i, int j) const noexcept { return d_[index(i, j)]; }
    void set_c(int i, int j, double v);
    void set_d(int i, int j, double v);

    const std::vector<double>& c_matrix() const noexcept { return c_; }
    const std::vector<double>& d_matrix() const noexcept { return d_; }

private:
    std::size_t index(int i, int j) const noexcept {
        return static_cast<std::size_t>(i - 1) * static_cast<std::size_t>(spec_.cutoff) +
               static_cast<std::size_t>(j - 1);
    }
    void check_mode(int i, int j) const;

    DiffeoSpec spec_{};
    std::vector<double> c_;
    std::vector<double> d_;
};

/// Per-pixel displacement in unit-square coordinates.
///
/// Row-major with rows along v and columns along u: element (row q, col p)
/// is the displacement at u = (p + 1/2)/n, v = (q + 1/2)/n.
struct DisplacementGrid {
    int n = 0;
    std::vector<double> tau_u;
    std::vector<double> tau_v;

    static DisplacementGrid zeros(int n);
    double u_at(int row, int col) const noexcept { return tau_u[static_cast<std::size_t>(row) * n + col]; }
    double v_at(int row, int col) const noexcept { return tau_v[static_cast<std::size_t>(row) * n + col]; }
};

/// Pixel-center coordinate of pixel index p on an n-pixel axis.
inline double pixel_center(int p, int n) noexcept { return (p + 0.5) / n; }

struct Jacobian {
    double du_du = 0.0;  // d tau_u / du
    double du_dv = 0.0;  // d tau_u / dv
    double dv_du = 0.0;  // d tau_v / du
    double dv_dv = 0.0;  // d tau_v / dv
};

struct XiField {
    int n = 0;
    std::vector<double> values;   // same layout as DisplacementGrid
    std::size_t clamped = 0;      // points whose radicand rounded below zero

    double max() const;
};

struct ValidityReport {
    double delta = 0.0;            // ensemble rms displacement, pixels
    double realized_delta = 0.0;   // rms displacement of this field, pixels
    double grad_norm_sq = 0.0;
    double xi_max = 0.0;
    bool is_bijective = true;      // xi_max < 1 (sufficient condition)
    std::optional<double> t_lower; // absent at cutoff 1
    std::optional<double> t_upper;
    std::size_t xi_clamped = 0;
};

/// Number of lattice modes (i, j >= 1) inside the cutoff disk.
std::size_t mode_count(int cutoff);

/// Sum over the cutoff disk of 1/(i^2 + j^2).
double inverse_wavenumber_sum(int cutoff);

/// Draw C_ij, D_ij ~ N(0, T/(i^2+j^2)). For each mode in row-major order,
/// C is drawn before D. T == 0 yields exact +0 everywhere without consuming
/// randomness.
DiffeoField sample_field(const DiffeoSpec& spec, RandomStream& rng);
/// Same, using stream (spec.seed, 0).
DiffeoField sample_field(const DiffeoSpec& spec);

DisplacementGrid evaluate_displacement(const DiffeoField& field);

/// Displacement at an arbitrary point of the unit square.
std::pair<double, double> displacement_at(const DiffeoField& field, double u, double v);

/// Analytic Jacobian of the displacement at (u, v).
Jacobian jacobian_at(const DiffeoField& field, double u, double v);

/// ||grad tau||^2 = (pi^2/4) sum (C^2 + D^2)(i^2 + j^2).
double grad_norm_sq(const DiffeoField& field);

/// Exact finite-sum delta: delta^2 = (T n^2 / 2) sum_{disk} 1/(i^2+j^2).
double expected_delta(const DiffeoSpec& spec);
/// Large-cutoff form delta^2 = (pi/4) n^2 T ln c.
double asymptotic_delta(const DiffeoSpec& spec);
/// rms displacement of one field over the unit square, in pixels.
double realized_delta(const DiffeoField& field);

/// Inverse of expected_delta in T. Throws ParameterError when the cutoff
/// disk holds no mode (cutoff 1) or the target is negative.
double temperature_for_delta(int n, int cutoff, double delta_target);

/// Bijectivity functional for one Jacobian. Returns the clamped value and
/// sets `clamped` when the radicand rounded below zero.
double xi_from_jacobian(const Jacobian& jac, bool* clamped = nullptr);

/// Xi on the pixel-center grid using analytic derivatives.
XiField xi_field(const DiffeoField& field);

/// 1 / (pi n^2 ln c): the temperature where delta reaches 1/2 asymptotically.
std::optional<double> temperature_lower_bound(int n, int cutoff);
/// 4 / (pi^3 c^2 ln c): the temperature where the median max Xi reaches 1.
std::optional<double> temperature_upper_bound(int cutoff);
/// (c/2) sqrt(pi^3 T ln c).
double predicted_max_xi(double temperature, int cutoff);

ValidityReport validity(const DiffeoSpec& spec, const DiffeoField& field);

}  // namespace diffeo
