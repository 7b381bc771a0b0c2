#include "diffeo/diffeo_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "diffeo/errors.hpp"

namespace diffeo {

namespace {

constexpr double kPi = std::numbers::pi;

bool in_disk(int i, int j, int cutoff) noexcept { return i * i + j * j <= cutoff * cutoff; }

// Basis tables over pixel centers: row k-1 holds the k-th mode at each pixel.
struct BasisTables {
    std::vector<double> sine;        // sin(k pi x)
    std::vector<double> dsine;       // k pi cos(k pi x)
};

BasisTables basis_tables(int cutoff, int n) {
    BasisTables t;
    t.sine.resize(static_cast<std::size_t>(cutoff) * n);
    t.dsine.resize(t.sine.size());
    for (int k = 1; k <= cutoff; ++k) {
        for (int p = 0; p < n; ++p) {
            const double x = pixel_center(p, n);
            const std::size_t idx = static_cast<std::size_t>(k - 1) * n + p;
            t.sine[idx] = std::sin(k * kPi * x);
            t.dsine[idx] = k * kPi * std::cos(k * kPi * x);
        }
    }
    return t;
}

// out[q][p] = sum_j vtab[j][q] * sum_i coeff[i][j] * utab[i][p]
std::vector<double> separable_sum(const std::vector<double>& coeff, int cutoff, int n,
                                  const std::vector<double>& utab, const std::vector<double>& vtab) {
    const auto c = static_cast<std::size_t>(cutoff);
    const auto nn = static_cast<std::size_t>(n);
    std::vector<double> partial(c * nn, 0.0);  // [j][p]
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const double a = coeff[i * c + j];
            if (a == 0.0) continue;
            double* dst = &partial[j * nn];
            const double* src = &utab[i * nn];
            for (std::size_t p = 0; p < nn; ++p) dst[p] += a * src[p];
        }
    }
    std::vector<double> out(nn * nn, 0.0);
    for (std::size_t q = 0; q < nn; ++q) {
        double* row = &out[q * nn];
        for (std::size_t j = 0; j < c; ++j) {
            const double w = vtab[j * nn + q];
            const double* src = &partial[j * nn];
            for (std::size_t p = 0; p < nn; ++p) row[p] += w * src[p];
        }
    }
    return out;
}

}  // namespace

void DiffeoSpec::validate() const {
    if (n < 2) throw ParameterError("n must be >= 2, got " + std::to_string(n));
    if (cutoff < 1) throw ParameterError("cutoff must be >= 1, got " + std::to_string(cutoff));
    if (cutoff > n)
        throw ParameterError("cutoff " + std::to_string(cutoff) + " exceeds grid size " + std::to_string(n));
    if (!(temperature >= 0.0) || !std::isfinite(temperature))
        throw ParameterError("temperature must be finite and >= 0");
}

DiffeoField::DiffeoField(const DiffeoSpec& spec) : spec_(spec) {
    spec_.validate();
    const auto size = static_cast<std::size_t>(spec_.cutoff) * spec_.cutoff;
    c_.assign(size, 0.0);
    d_.assign(size, 0.0);
}

DiffeoField::DiffeoField(const DiffeoSpec& spec, std::vector<double> c_coeffs, std::vector<double> d_coeffs)
    : spec_(spec), c_(std::move(c_coeffs)), d_(std::move(d_coeffs)) {
    spec_.validate();
    const auto size = static_cast<std::size_t>(spec_.cutoff) * spec_.cutoff;
    if (c_.size() != size || d_.size() != size)
        throw ParameterError("coefficient matrices must be cutoff x cutoff");
    for (int i = 1; i <= spec_.cutoff; ++i)
        for (int j = 1; j <= spec_.cutoff; ++j)
            if (!in_disk(i, j, spec_.cutoff) && (c(i, j) != 0.0 || d(i, j) != 0.0))
                throw ParameterError("nonzero coefficient outside the cutoff disk at (" + std::to_string(i) +
                                     ", " + std::to_string(j) + ")");
}

void DiffeoField::check_mode(int i, int j) const {
    if (i < 1 || j < 1 || i > spec_.cutoff || j > spec_.cutoff || !in_disk(i, j, spec_.cutoff))
        throw ParameterError("mode (" + std::to_string(i) + ", " + std::to_string(j) +
                             ") is outside the cutoff disk");
}

void DiffeoField::set_c(int i, int j, double v) {
    check_mode(i, j);
    c_[index(i, j)] = v;
}

void DiffeoField::set_d(int i, int j, double v) {
    check_mode(i, j);
    d_[index(i, j)] = v;
}

DisplacementGrid DisplacementGrid::zeros(int n) {
    DisplacementGrid g;
    g.n = n;
    g.tau_u.assign(static_cast<std::size_t>(n) * n, 0.0);
    g.tau_v.assign(g.tau_u.size(), 0.0);
    return g;
}

double XiField::max() const {
    return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

std::size_t mode_count(int cutoff) {
    std::size_t count = 0;
    for (int i = 1; i <= cutoff; ++i)
        for (int j = 1; j <= cutoff; ++j)
            if (in_disk(i, j, cutoff)) ++count;
    return count;
}

double inverse_wavenumber_sum(int cutoff) {
    double sum = 0.0;
    for (int i = 1; i <= cutoff; ++i)
        for (int j = 1; j <= cutoff; ++j)
            if (in_disk(i, j, cutoff)) sum += 1.0 / (i * i + j * j);
    return sum;
}

DiffeoField sample_field(const DiffeoSpec& spec, RandomStream& rng) {
    DiffeoField field(spec);
    if (spec.temperature == 0.0) return field;
    const int c = spec.cutoff;
    for (int i = 1; i <= c; ++i) {
        for (int j = 1; j <= c; ++j) {
            if (!in_disk(i, j, c)) continue;
            const double sd = std::sqrt(spec.temperature / (i * i + j * j));
            field.set_c(i, j, sd * rng.normal());
            field.set_d(i, j, sd * rng.normal());
        }
    }
    return field;
}

DiffeoField sample_field(const DiffeoSpec& spec) {
    RandomStream rng(spec.seed, 0);
    return sample_field(spec, rng);
}

DisplacementGrid evaluate_displacement(const DiffeoField& field) {
    const int n = field.spec().n;
    const int c = field.cutoff();
    const auto tables = basis_tables(c, n);
    DisplacementGrid g;
    g.n = n;
    g.tau_u = separable_sum(field.c_matrix(), c, n, tables.sine, tables.sine);
    g.tau_v = separable_sum(field.d_matrix(), c, n, tables.sine, tables.sine);
    return g;
}

std::pair<double, double> displacement_at(const DiffeoField& field, double u, double v) {
    double tu = 0.0, tv = 0.0;
    const int c = field.cutoff();
    for (int i = 1; i <= c; ++i) {
        const double si = std::sin(i * kPi * u);
        for (int j = 1; j <= c; ++j) {
            if (!in_disk(i, j, c)) continue;
            const double b = si * std::sin(j * kPi * v);
            tu += field.c(i, j) * b;
            tv += field.d(i, j) * b;
        }
    }
    return {tu, tv};
}

Jacobian jacobian_at(const DiffeoField& field, double u, double v) {
    Jacobian jac;
    const int c = field.cutoff();
    for (int i = 1; i <= c; ++i) {
        const double si = std::sin(i * kPi * u);
        const double dsi = i * kPi * std::cos(i * kPi * u);
        for (int j = 1; j <= c; ++j) {
            if (!in_disk(i, j, c)) continue;
            const double sj = std::sin(j * kPi * v);
            const double dsj = j * kPi * std::cos(j * kPi * v);
            jac.du_du += field.c(i, j) * dsi * sj;
            jac.du_dv += field.c(i, j) * si * dsj;
            jac.dv_du += field.d(i, j) * dsi * sj;
            jac.dv_dv += field.d(i, j) * si * dsj;
        }
    }
    return jac;
}

double grad_norm_sq(const DiffeoField& field) {
    double sum = 0.0;
    const int c = field.cutoff();
    for (int i = 1; i <= c; ++i) {
        for (int j = 1; j <= c; ++j) {
            const double cij = field.c(i, j);
            const double dij = field.d(i, j);
            sum += (cij * cij + dij * dij) * (i * i + j * j);
        }
    }
    return kPi * kPi / 4.0 * sum;
}

double expected_delta(const DiffeoSpec& spec) {
    if (spec.cutoff < 1) throw ParameterError("cutoff must be >= 1");
    const double n = spec.n;
    return std::sqrt(spec.temperature * n * n / 2.0 * inverse_wavenumber_sum(spec.cutoff));
}

double asymptotic_delta(const DiffeoSpec& spec) {
    if (spec.cutoff < 1) throw ParameterError("cutoff must be >= 1");
    const double n = spec.n;
    return std::sqrt(kPi / 4.0 * n * n * spec.temperature * std::log(static_cast<double>(spec.cutoff)));
}

double realized_delta(const DiffeoField& field) {
    // Each sin^2 sin^2 term integrates to 1/4 and distinct modes are orthogonal.
    double sum = 0.0;
    for (double x : field.c_matrix()) sum += x * x;
    for (double x : field.d_matrix()) sum += x * x;
    const double n = field.spec().n;
    return n * std::sqrt(sum / 4.0);
}

double temperature_for_delta(int n, int cutoff, double delta_target) {
    if (n < 2) throw ParameterError("n must be >= 2");
    if (!(delta_target >= 0.0) || !std::isfinite(delta_target))
        throw ParameterError("delta must be finite and >= 0");
    const double s = cutoff >= 1 ? inverse_wavenumber_sum(cutoff) : 0.0;
    if (s == 0.0)
        throw ParameterError("cutoff " + std::to_string(cutoff) + " admits no frequency (need cutoff >= 2)");
    const double nn = n;
    return 2.0 * delta_target * delta_target / (nn * nn * s);
}

double xi_from_jacobian(const Jacobian& jac, bool* clamped) {
    const double frob = jac.du_du * jac.du_du + jac.du_dv * jac.du_dv + jac.dv_du * jac.dv_du +
                        jac.dv_dv * jac.dv_dv;
    const double det = jac.du_du * jac.dv_dv - jac.du_dv * jac.dv_du;
    const double trace = jac.du_du + jac.dv_dv;
    double radicand = frob - 2.0 * det;
    const bool neg = radicand < 0.0;
    if (neg) radicand = 0.0;
    if (clamped) *clamped = neg;
    return 0.5 * (std::sqrt(radicand) - trace);
}

XiField xi_field(const DiffeoField& field) {
    const int n = field.spec().n;
    const int c = field.cutoff();
    const auto t = basis_tables(c, n);
    const auto uu = separable_sum(field.c_matrix(), c, n, t.dsine, t.sine);
    const auto uv = separable_sum(field.c_matrix(), c, n, t.sine, t.dsine);
    const auto vu = separable_sum(field.d_matrix(), c, n, t.dsine, t.sine);
    const auto vv = separable_sum(field.d_matrix(), c, n, t.sine, t.dsine);

    XiField xi;
    xi.n = n;
    xi.values.resize(uu.size());
    for (std::size_t k = 0; k < uu.size(); ++k) {
        bool clamped = false;
        xi.values[k] = xi_from_jacobian({uu[k], uv[k], vu[k], vv[k]}, &clamped);
        if (clamped) ++xi.clamped;
    }
    return xi;
}

std::optional<double> temperature_lower_bound(int n, int cutoff) {
    if (cutoff < 2) return std::nullopt;
    const double nn = n;
    return 1.0 / (kPi * nn * nn * std::log(static_cast<double>(cutoff)));
}

std::optional<double> temperature_upper_bound(int cutoff) {
    if (cutoff < 2) return std::nullopt;
    const double c = cutoff;
    return 4.0 / (kPi * kPi * kPi * c * c * std::log(c));
}

double predicted_max_xi(double temperature, int cutoff) {
    const double c = cutoff;
    return c / 2.0 * std::sqrt(kPi * kPi * kPi * temperature * std::log(c));
}

ValidityReport validity(const DiffeoSpec& spec, const DiffeoField& field) {
    spec.validate();
    const auto xi = xi_field(field);
    ValidityReport r;
    r.delta = expected_delta(spec);
    r.realized_delta = realized_delta(field);
    r.grad_norm_sq = grad_norm_sq(field);
    r.xi_max = xi.max();
    r.is_bijective = r.xi_max < 1.0;
    r.t_lower = temperature_lower_bound(spec.n, spec.cutoff);
    r.t_upper = temperature_upper_bound(spec.cutoff);
    r.xi_clamped = xi.clamped;
    return r;
}

}  // namespace diffeo
