#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffeo/diffeo_core.hpp"
#include "diffeo/interpolation.hpp"
#include "diffeo/rng.hpp"

namespace diffeo {

/// Black-box map from a flattened input to a fixed-size output vector.
/// Implementations must be deterministic and safe to call concurrently.
class Predictor {
public:
    virtual ~Predictor() = default;

    virtual std::string name() const = 0;
    virtual std::size_t output_dim() const = 0;
    /// Expected flattened input size; 0 accepts any.
    virtual std::size_t input_dim() const { return 0; }
    virtual std::vector<double> evaluate(std::span<const double> input) const = 0;

    std::vector<double> operator()(const Image& image) const { return evaluate(image.data()); }
};

/// f(x) = M x with M stored row-major (k x dim).
class LinearPredictor final : public Predictor {
public:
    LinearPredictor(std::size_t k, std::size_t dim, std::vector<double> matrix, std::string name = "linear");

    /// Entries i.i.d. N(0, 1/dim).
    static LinearPredictor random_gaussian(std::size_t k, std::size_t dim, std::uint64_t seed);
    static LinearPredictor identity(std::size_t dim);

    std::string name() const override { return name_; }
    std::size_t output_dim() const override { return k_; }
    std::size_t input_dim() const override { return dim_; }
    std::vector<double> evaluate(std::span<const double> input) const override;

private:
    std::size_t k_;
    std::size_t dim_;
    std::vector<double> matrix_;
    std::string name_;
};

/// f(x) = A act(W x) with W ~ N(0, 1/dim), A ~ N(0, 1/width).
class RandomFeaturePredictor final : public Predictor {
public:
    enum class Activation { ReLU, Tanh };

    RandomFeaturePredictor(std::size_t k, std::size_t dim, std::size_t width, Activation act, std::uint64_t seed);

    std::string name() const override;
    std::size_t output_dim() const override { return k_; }
    std::size_t input_dim() const override { return dim_; }
    std::vector<double> evaluate(std::span<const double> input) const override;

private:
    std::size_t k_, dim_, width_;
    Activation act_;
    std::vector<double> hidden_;   // width x dim
    std::vector<double> readout_;  // k x width
};

enum class Aggregation { Median, Mean };

const char* to_string(Aggregation a) noexcept;
Aggregation parse_aggregation(const std::string& name);

/// Median (mean of the two middle values for even sizes) or mean.
double aggregate(std::vector<double> values, Aggregation mode);

struct ProbeConfig {
    int n = 32;
    int cutoff = 3;
    double delta = 1.0;
    InterpolationKind kind{};
    int n_transforms_per_image = 1;
    Aggregation aggregation = Aggregation::Median;
    std::uint64_t seed = 0;

    void validate() const;
};

struct StabilityReport {
    double d_f = 0.0;
    double g_f = 0.0;
    double r_f = 0.0;
    double noise_norm = 0.0;

    // Raw statistics behind the ratios.
    double diffeo_numerator = 0.0;
    double noise_numerator = 0.0;
    double denominator = 0.0;

    // Configuration echo.
    double delta = 0.0;
    double temperature = 0.0;
    int n = 0;
    int cutoff = 0;
    InterpolationKind kind{};
    Aggregation aggregation = Aggregation::Median;
    std::uint64_t seed = 0;
    std::string predictor;

    std::size_t n_images = 0;
    std::size_t n_transforms_per_image = 0;
    std::size_t n_pairs = 0;
    /// Largest |‖eta‖ - noise_norm| / noise_norm over all noise draws.
    double noise_norm_max_rel_error = 0.0;

    std::size_t realizations = 1;
    std::size_t excluded_realizations = 0;
};

/// The part of a probe batch needed to turn predictor outputs into a report.
struct ProbeSummary {
    ProbeConfig config;
    double temperature = 0.0;
    double noise_norm = 0.0;
    double noise_norm_max_rel_error = 0.0;
    std::size_t n_images = 0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Everything a predictor needs to see for one stability measurement.
///
/// deformed[k] and noisy[k] belong to image k / n_transforms_per_image;
/// reference[i] is image i itself (bilinear) or its smoothed baseline (Gaussian).
struct ProbeBatch {
    ProbeConfig config;
    double temperature = 0.0;
    double noise_norm = 0.0;
    double noise_norm_max_rel_error = 0.0;
    std::vector<Image> reference;
    std::vector<Image> deformed;
    std::vector<Image> noisy;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<std::uint64_t> field_seeds;

    ProbeSummary summary() const;
};

/// Mean of ||tau x - x|| over matched (image, field) pairs, with x replaced by
/// its smoothed baseline under Gaussian interpolation. fields.size() must be
/// a multiple of images.size(); field k deforms image k / (fields/images).
double calibrate_noise_norm(std::span<const Image> images, std::span<const DiffeoField> fields,
                            const InterpolationKind& kind);

/// Isotropic direction scaled to exactly `radius`.
std::vector<double> sample_sphere_noise(std::size_t dim, double radius, RandomStream& rng);

/// Pairs for the shared denominator: all i < j up to 512 images, otherwise
/// 512 * count random pairs of distinct images, drawn with replacement from `seed`.
std::vector<std::pair<std::size_t, std::size_t>> denominator_pairs(std::size_t count, std::uint64_t seed);

inline constexpr std::size_t kFullPairingLimit = 512;

/// Sample fields, deform, calibrate the noise norm and draw sphere noise.
ProbeBatch build_probe_batch(const ProbeConfig& config, std::span<const Image> images);

/// Turn predictor outputs on a batch into a report. Rows follow the batch
/// layout; all rows share the same dimension. Throws DegenerateError when
/// the denominator or the noise numerator vanishes.
StabilityReport assemble_report(const ProbeSummary& summary, std::span<const std::vector<double>> f_reference,
                                std::span<const std::vector<double>> f_deformed,
                                std::span<const std::vector<double>> f_noisy, const std::string& predictor);
StabilityReport assemble_report(const ProbeBatch& batch, std::span<const std::vector<double>> f_reference,
                                std::span<const std::vector<double>> f_deformed,
                                std::span<const std::vector<double>> f_noisy, const std::string& predictor);

/// Evaluate a predictor on every image of a batch (parallel over images).
std::vector<std::vector<double>> evaluate_all(const Predictor& f, std::span<const Image> images);

StabilityReport compute_stability(const Predictor& f, const ProbeConfig& config, std::span<const Image> images);

/// Geometric mean of D_f, G_f and R_f across realizations. Reports with a
/// non-positive value are skipped and counted in excluded_realizations.
StabilityReport log_average(std::span<const StabilityReport> reports);

/// One report per delta, sharing images and seeds.
std::vector<StabilityReport> stability_vs_delta_sweep(const Predictor& f, std::span<const double> deltas,
                                                      const ProbeConfig& config, std::span<const Image> images);

/// CSV with one row per report (header included).
std::string sweep_to_csv(std::span<const StabilityReport> reports);

/// n x n white-noise images with i.i.d. N(0, 1) pixels.
std::vector<Image> white_noise_images(std::size_t count, int channels, int n, std::uint64_t seed);

}  // namespace diffeo
