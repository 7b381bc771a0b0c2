#include "diffeo/stability.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "diffeo/errors.hpp"

namespace diffeo {

namespace {

double sq_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("predictor outputs differ in dimension");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double l2_distance(std::span<const double> a, std::span<const double> b) { return std::sqrt(sq_distance(a, b)); }

}  // namespace

// ---------------------------------------------------------------- predictors

LinearPredictor::LinearPredictor(std::size_t k, std::size_t dim, std::vector<double> matrix, std::string name)
    : k_(k), dim_(dim), matrix_(std::move(matrix)), name_(std::move(name)) {
    if (k == 0 || dim == 0) throw ParameterError("linear predictor needs positive dimensions");
    if (matrix_.size() != k * dim) throw ParameterError("linear predictor matrix must be k x dim");
}

LinearPredictor LinearPredictor::random_gaussian(std::size_t k, std::size_t dim, std::uint64_t seed) {
    RandomStream rng(derive_seed(seed, seed_domain::predictor, 0), 0);
    std::vector<double> m(k * dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& v : m) v = scale * rng.normal();
    return LinearPredictor(k, dim, std::move(m), "random-linear");
}

LinearPredictor LinearPredictor::identity(std::size_t dim) {
    std::vector<double> m(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) m[i * dim + i] = 1.0;
    return LinearPredictor(dim, dim, std::move(m), "identity");
}

std::vector<double> LinearPredictor::evaluate(std::span<const double> input) const {
    if (input.size() != dim_)
        throw ParameterError("predictor expects " + std::to_string(dim_) + " inputs, got " +
                             std::to_string(input.size()));
    std::vector<double> out(k_, 0.0);
    for (std::size_t r = 0; r < k_; ++r) {
        const double* row = &matrix_[r * dim_];
        double acc = 0.0;
        for (std::size_t c = 0; c < dim_; ++c) acc += row[c] * input[c];
        out[r] = acc;
    }
    return out;
}

RandomFeaturePredictor::RandomFeaturePredictor(std::size_t k, std::size_t dim, std::size_t width, Activation act,
                                               std::uint64_t seed)
    : k_(k), dim_(dim), width_(width), act_(act) {
    if (k == 0 || dim == 0 || width == 0) throw ParameterError("random-feature predictor needs positive dimensions");
    RandomStream rng(derive_seed(seed, seed_domain::predictor, 1), 0);
    hidden_.resize(width * dim);
    readout_.resize(k * width);
    const double hs = 1.0 / std::sqrt(static_cast<double>(dim));
    const double rs = 1.0 / std::sqrt(static_cast<double>(width));
    for (double& v : hidden_) v = hs * rng.normal();
    for (double& v : readout_) v = rs * rng.normal();
}

std::string RandomFeaturePredictor::name() const {
    return act_ == Activation::ReLU ? "random-features-relu" : "random-features-tanh";
}

std::vector<double> RandomFeaturePredictor::evaluate(std::span<const double> input) const {
    if (input.size() != dim_)
        throw ParameterError("predictor expects " + std::to_string(dim_) + " inputs, got " +
                             std::to_string(input.size()));
    std::vector<double> h(width_);
    for (std::size_t m = 0; m < width_; ++m) {
        const double* row = &hidden_[m * dim_];
        double z = 0.0;
        for (std::size_t c = 0; c < dim_; ++c) z += row[c] * input[c];
        h[m] = act_ == Activation::ReLU ? std::max(z, 0.0) : std::tanh(z);
    }
    std::vector<double> out(k_, 0.0);
    for (std::size_t r = 0; r < k_; ++r)
        for (std::size_t m = 0; m < width_; ++m) out[r] += readout_[r * width_ + m] * h[m];
    return out;
}

// --------------------------------------------------------------- aggregation

const char* to_string(Aggregation a) noexcept { return a == Aggregation::Mean ? "mean" : "median"; }

Aggregation parse_aggregation(const std::string& name) {
    if (name == "median") return Aggregation::Median;
    if (name == "mean") return Aggregation::Mean;
    throw ParameterError("unknown aggregation '" + name + "' (expected median or mean)");
}

double aggregate(std::vector<double> values, Aggregation mode) {
    if (values.empty()) throw ParameterError("cannot aggregate an empty set");
    if (mode == Aggregation::Mean)
        return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

void ProbeConfig::validate() const {
    DiffeoSpec{n, 0.0, cutoff, 0}.validate();
    if (cutoff < 2) throw ParameterError("probe cutoff must be >= 2 so that a delta can be reached");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ParameterError("probe delta must be positive");
    if (n_transforms_per_image < 1) throw ParameterError("n_transforms_per_image must be >= 1");
    kind.validate();
}

// ----------------------------------------------------------------- sampling

double calibrate_noise_norm(std::span<const Image> images, std::span<const DiffeoField> fields,
                            const InterpolationKind& kind) {
    if (images.empty() || fields.empty()) throw ParameterError("noise calibration needs images and fields");
    if (fields.size() % images.size() != 0)
        throw ParameterError("field count must be a multiple of the image count");
    const std::size_t per = fields.size() / images.size();
    std::vector<double> norms(fields.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < fields.size(); ++k) {
        const Image& x = images[k / per];
        const Image base = interpolation_baseline(x, kind);
        const Image warped = apply_diffeo(x, evaluate_displacement(fields[k]), kind);
        norms[k] = l2_distance(warped.data(), base.data());
    }
    return std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(norms.size());
}

std::vector<double> sample_sphere_noise(std::size_t dim, double radius, RandomStream& rng) {
    if (dim == 0) throw ParameterError("noise dimension must be >= 1");
    if (!(radius >= 0.0) || !std::isfinite(radius)) throw ParameterError("noise radius must be finite and >= 0");
    std::vector<double> v(dim);
    double norm = 0.0;
    while (norm == 0.0) {
        double ss = 0.0;
        for (double& x : v) {
            x = rng.normal();
            ss += x * x;
        }
        norm = std::sqrt(ss);
    }
    const double scale = radius / norm;
    for (double& x : v) x *= scale;
    return v;
}

std::vector<std::pair<std::size_t, std::size_t>> denominator_pairs(std::size_t count, std::uint64_t seed) {
    if (count < 2) throw ParameterError("need at least two images for the denominator");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (count <= kFullPairingLimit) {
        pairs.reserve(count * (count - 1) / 2);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = i + 1; j < count; ++j) pairs.emplace_back(i, j);
        return pairs;
    }
    RandomStream rng(derive_seed(seed, seed_domain::pairs, 0), 0);
    const std::size_t total = kFullPairingLimit * count;
    pairs.reserve(total);
    while (pairs.size() < total) {
        const auto i = static_cast<std::size_t>(rng.below(count));
        const auto j = static_cast<std::size_t>(rng.below(count));
        if (i != j) pairs.emplace_back(std::min(i, j), std::max(i, j));
    }
    return pairs;
}

ProbeBatch build_probe_batch(const ProbeConfig& config, std::span<const Image> images) {
    config.validate();
    if (images.size() < 2) throw ParameterError("stability probes need at least two images");
    for (const auto& img : images) {
        if (img.n() != config.n)
            throw ParameterError("probe image is " + std::to_string(img.n()) + " pixels wide, config says " +
                                 std::to_string(config.n));
        if (img.channels() != images.front().channels()) throw ParameterError("probe images must share channels");
    }

    ProbeBatch batch;
    batch.config = config;
    batch.temperature = temperature_for_delta(config.n, config.cutoff, config.delta);
    const std::size_t per = static_cast<std::size_t>(config.n_transforms_per_image);
    const std::size_t total = images.size() * per;

    batch.reference.resize(images.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < images.size(); ++i) batch.reference[i] = interpolation_baseline(images[i], config.kind);

    batch.field_seeds.resize(total);
    batch.deformed.resize(total);
    std::vector<double> norms(total);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < total; ++k) {
        const std::uint64_t s = derive_seed(config.seed, seed_domain::field, k);
        batch.field_seeds[k] = s;
        const DiffeoSpec spec{config.n, batch.temperature, config.cutoff, s};
        const auto field = sample_field(spec);
        batch.deformed[k] = apply_diffeo(images[k / per], evaluate_displacement(field), config.kind);
        norms[k] = l2_distance(batch.deformed[k].data(), batch.reference[k / per].data());
    }
    batch.noise_norm = std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(total);

    batch.noisy.resize(total);
    std::vector<double> rel_err(total, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < total; ++k) {
        const Image& base = batch.reference[k / per];
        RandomStream rng(derive_seed(config.seed, seed_domain::noise, k), 0);
        const auto eta = sample_sphere_noise(base.size(), batch.noise_norm, rng);
        double ss = 0.0;
        for (double e : eta) ss += e * e;
        if (batch.noise_norm > 0.0) rel_err[k] = std::abs(std::sqrt(ss) - batch.noise_norm) / batch.noise_norm;
        std::vector<double> data(base.data().begin(), base.data().end());
        for (std::size_t p = 0; p < data.size(); ++p) data[p] += eta[p];
        batch.noisy[k] = Image(base.channels(), base.n(), std::move(data));
    }
    batch.noise_norm_max_rel_error = *std::max_element(rel_err.begin(), rel_err.end());
    batch.pairs = denominator_pairs(images.size(), config.seed);
    return batch;
}

ProbeSummary ProbeBatch::summary() const {
    return ProbeSummary{config, temperature, noise_norm, noise_norm_max_rel_error, reference.size(), pairs};
}

StabilityReport assemble_report(const ProbeBatch& batch, std::span<const std::vector<double>> f_reference,
                                std::span<const std::vector<double>> f_deformed,
                                std::span<const std::vector<double>> f_noisy, const std::string& predictor) {
    return assemble_report(batch.summary(), f_reference, f_deformed, f_noisy, predictor);
}

StabilityReport assemble_report(const ProbeSummary& batch, std::span<const std::vector<double>> f_reference,
                                std::span<const std::vector<double>> f_deformed,
                                std::span<const std::vector<double>> f_noisy, const std::string& predictor) {
    const auto& cfg = batch.config;
    const std::size_t per = static_cast<std::size_t>(cfg.n_transforms_per_image);
    const std::size_t total = batch.n_images * per;
    if (f_reference.size() != batch.n_images || f_deformed.size() != total || f_noisy.size() != total)
        throw DataError("predictor output counts do not match the probe batch");

    std::vector<double> diffeo_sq(f_deformed.size()), noise_sq(f_noisy.size()), pair_sq(batch.pairs.size());
    for (std::size_t k = 0; k < f_deformed.size(); ++k) {
        diffeo_sq[k] = sq_distance(f_deformed[k], f_reference[k / per]);
        noise_sq[k] = sq_distance(f_noisy[k], f_reference[k / per]);
    }
    for (std::size_t p = 0; p < batch.pairs.size(); ++p) {
        if (batch.pairs[p].second >= batch.n_images) throw DataError("denominator pair index out of range");
        pair_sq[p] = sq_distance(f_reference[batch.pairs[p].first], f_reference[batch.pairs[p].second]);
    }

    StabilityReport r;
    r.diffeo_numerator = aggregate(std::move(diffeo_sq), cfg.aggregation);
    r.noise_numerator = aggregate(std::move(noise_sq), cfg.aggregation);
    r.denominator = aggregate(std::move(pair_sq), cfg.aggregation);
    if (!(r.denominator > 0.0))
        throw DegenerateError("degenerate predictor: outputs do not vary across the probe set");
    if (!(r.noise_numerator > 0.0))
        throw DegenerateError("degenerate predictor: outputs do not respond to the matched noise");

    r.d_f = r.diffeo_numerator / r.denominator;
    r.g_f = r.noise_numerator / r.denominator;
    r.r_f = r.d_f / r.g_f;
    r.noise_norm = batch.noise_norm;
    r.noise_norm_max_rel_error = batch.noise_norm_max_rel_error;
    r.delta = cfg.delta;
    r.temperature = batch.temperature;
    r.n = cfg.n;
    r.cutoff = cfg.cutoff;
    r.kind = cfg.kind;
    r.aggregation = cfg.aggregation;
    r.seed = cfg.seed;
    r.predictor = predictor;
    r.n_images = batch.n_images;
    r.n_transforms_per_image = per;
    r.n_pairs = batch.pairs.size();
    return r;
}

std::vector<std::vector<double>> evaluate_all(const Predictor& f, std::span<const Image> images) {
    std::vector<std::vector<double>> out(images.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = f(images[i]);
    return out;
}

StabilityReport compute_stability(const Predictor& f, const ProbeConfig& config, std::span<const Image> images) {
    const auto batch = build_probe_batch(config, images);
    const auto fr = evaluate_all(f, batch.reference);
    const auto fd = evaluate_all(f, batch.deformed);
    const auto fn = evaluate_all(f, batch.noisy);
    return assemble_report(batch, fr, fd, fn, f.name());
}

StabilityReport log_average(std::span<const StabilityReport> reports) {
    if (reports.empty()) throw ParameterError("log_average needs at least one report");
    double sd = 0.0, sg = 0.0, sr = 0.0;
    std::size_t used = 0, excluded = 0;
    const StabilityReport* first = nullptr;
    for (const auto& r : reports) {
        if (!(r.d_f > 0.0 && r.g_f > 0.0 && r.r_f > 0.0) || !std::isfinite(r.r_f)) {
            excluded += r.realizations;
            continue;
        }
        if (!first) first = &r;
        const double w = static_cast<double>(r.realizations);
        sd += w * std::log(r.d_f);
        sg += w * std::log(r.g_f);
        sr += w * std::log(r.r_f);
        used += r.realizations;
    }
    if (used == 0) throw DegenerateError("log_average: every realization has a non-positive value");
    StabilityReport out = *first;
    const double m = static_cast<double>(used);
    out.d_f = std::exp(sd / m);
    out.g_f = std::exp(sg / m);
    out.r_f = std::exp(sr / m);
    out.realizations = used;
    out.excluded_realizations = excluded;
    double norm_sum = 0.0;
    for (const auto& r : reports) norm_sum += r.noise_norm;
    out.noise_norm = norm_sum / static_cast<double>(reports.size());
    return out;
}

std::vector<StabilityReport> stability_vs_delta_sweep(const Predictor& f, std::span<const double> deltas,
                                                      const ProbeConfig& config, std::span<const Image> images) {
    if (deltas.empty()) throw ParameterError("sweep needs at least one delta");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0.0)) throw ParameterError("sweep deltas must be positive");
        if (i > 0 && !(deltas[i] > deltas[i - 1])) throw ParameterError("sweep deltas must be ascending");
    }
    std::vector<StabilityReport> out;
    out.reserve(deltas.size());
    for (double d : deltas) {
        ProbeConfig c = config;
        c.delta = d;
        out.push_back(compute_stability(f, c, images));
    }
    return out;
}

std::string sweep_to_csv(std::span<const StabilityReport> reports) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "delta,temperature,cutoff,interpolation,aggregation,D_f,G_f,R_f,noise_norm,n_images,realizations\n";
    for (const auto& r : reports)
        os << r.delta << ',' << r.temperature << ',' << r.cutoff << ',' << to_string(r.kind.method) << ','
           << to_string(r.aggregation) << ',' << r.d_f << ',' << r.g_f << ',' << r.r_f << ',' << r.noise_norm << ','
           << r.n_images << ',' << r.realizations << '\n';
    return os.str();
}

std::vector<Image> white_noise_images(std::size_t count, int channels, int n, std::uint64_t seed) {
    std::vector<Image> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        RandomStream rng(derive_seed(seed, seed_domain::images, i), 0);
        std::vector<double> data(static_cast<std::size_t>(channels) * n * n);
        for (double& v : data) v = rng.normal();
        out.emplace_back(channels, n, std::move(data));
    }
    return out;
}

}  // namespace diffeo
