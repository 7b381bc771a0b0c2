#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "diffeo/errors.hpp"
#include "diffeo/stability.hpp"
#include "test_support.hpp"

using namespace diffeo;
using diffeo::testing::random_image;

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

std::vector<Image> images(std::size_t count, int n, std::uint64_t seed) {
    std::vector<Image> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(random_image(1, n, seed * 1000 + i));
    return out;
}

class ConstantPredictor final : public Predictor {
public:
    std::string name() const override { return "constant"; }
    std::size_t output_dim() const override { return 2; }
    std::vector<double> evaluate(std::span<const double>) const override { return {1.0, -1.0}; }
};

// f(x) = scale * M x, sharing M with a reference linear predictor.
class ScaledPredictor final : public Predictor {
public:
    ScaledPredictor(const Predictor& inner, double scale) : inner_(inner), scale_(scale) {}
    std::string name() const override { return "scaled"; }
    std::size_t output_dim() const override { return inner_.output_dim(); }
    std::vector<double> evaluate(std::span<const double> x) const override {
        auto y = inner_.evaluate(x);
        for (double& v : y) v *= scale_;
        return y;
    }

private:
    const Predictor& inner_;
    double scale_;
};

StabilityReport synthetic(double d, double g, std::size_t realizations = 1) {
    StabilityReport r;
    r.d_f = d;
    r.g_f = g;
    r.r_f = d / g;
    r.realizations = realizations;
    return r;
}

}  // namespace

TEST_SUITE("stability") {

TEST_CASE("aggregate") {
    CHECK(aggregate({3.0, 1.0, 2.0}, Aggregation::Median) == 2.0);
    CHECK(aggregate({4.0, 1.0, 3.0, 2.0}, Aggregation::Median) == 2.5);
    CHECK(aggregate({5.0}, Aggregation::Median) == 5.0);
    CHECK(aggregate({1.0, 2.0, 6.0}, Aggregation::Mean) == 3.0);
    CHECK_THROWS_AS(aggregate({}, Aggregation::Mean), ParameterError);
    CHECK(parse_aggregation("mean") == Aggregation::Mean);
    CHECK_THROWS_AS(parse_aggregation("mode"), ParameterError);

    // Median against a full sort on random data of both parities.
    RandomStream rng(5, 0);
    for (std::size_t len : {7u, 8u, 101u, 200u}) {
        std::vector<double> v(len);
        for (double& x : v) x = rng.normal();
        auto s = v;
        std::sort(s.begin(), s.end());
        const double expected = len % 2 ? s[len / 2] : 0.5 * (s[len / 2 - 1] + s[len / 2]);
        CHECK(aggregate(v, Aggregation::Median) == expected);
    }
}

TEST_CASE("probe config validation") {
    CHECK_NOTHROW(ProbeConfig{}.validate());
    ProbeConfig c;
    c.cutoff = 1;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = {};
    c.delta = 0.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = {};
    c.n_transforms_per_image = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = {};
    c.cutoff = 40;
    CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("sphere noise has exact norm and isotropic direction") {
    RandomStream rng(9, 0);
    const std::size_t dim = 64;
    double first_sq = 0.0;
    const int N = 4000;
    for (int k = 0; k < N; ++k) {
        const auto v = sample_sphere_noise(dim, 2.5, rng);
        double ss = 0.0;
        for (double x : v) ss += x * x;
        CHECK(std::sqrt(ss) == doctest::Approx(2.5).epsilon(1e-13));
        first_sq += v[0] * v[0];
    }
    // E v_0^2 = r^2 / dim; Var v_0^2 ~ 2 (r^2/dim)^2.
    const double target = 2.5 * 2.5 / dim;
    CHECK(std::abs(first_sq / N - target) < 4.0 * target * std::sqrt(2.0 / N));
    CHECK_THROWS_AS(sample_sphere_noise(0, 1.0, rng), ParameterError);
    CHECK_THROWS_AS(sample_sphere_noise(4, -1.0, rng), ParameterError);
    const auto zero = sample_sphere_noise(4, 0.0, rng);
    for (double x : zero) CHECK(x == 0.0);
}

TEST_CASE("denominator pairs") {
    const auto small = denominator_pairs(5, 0);
    CHECK(small.size() == 10);
    std::set<std::pair<std::size_t, std::size_t>> uniq(small.begin(), small.end());
    CHECK(uniq.size() == 10);
    for (auto [i, j] : small) CHECK(i < j);
    CHECK(denominator_pairs(512, 0).size() == 512 * 511 / 2);

    const auto big = denominator_pairs(600, 3);
    CHECK(big.size() == 512 * 600);
    for (auto [i, j] : big) {
        CHECK(i < j);
        CHECK(j < 600);
    }
    CHECK(denominator_pairs(600, 3) == big);
    CHECK(denominator_pairs(600, 4) != big);
    CHECK_THROWS_AS(denominator_pairs(1, 0), ParameterError);
}

TEST_CASE("probe batch layout and seeds") {
    ProbeConfig cfg;
    cfg.n = 16;
    cfg.cutoff = 4;
    cfg.delta = 0.8;
    cfg.n_transforms_per_image = 3;
    cfg.seed = 77;
    const auto imgs = images(4, 16, 1);
    const auto batch = build_probe_batch(cfg, imgs);
    CHECK(batch.reference.size() == 4);
    CHECK(batch.deformed.size() == 12);
    CHECK(batch.noisy.size() == 12);
    CHECK(batch.pairs.size() == 6);
    CHECK(batch.temperature == doctest::Approx(temperature_for_delta(16, 4, 0.8)));
    CHECK(batch.noise_norm_max_rel_error < 1e-12);
    for (std::size_t k = 0; k < 12; ++k) {
        CHECK(batch.field_seeds[k] == derive_seed(77, seed_domain::field, k));
        const auto field = sample_field(DiffeoSpec{16, batch.temperature, 4, batch.field_seeds[k]});
        const auto again = apply_diffeo(imgs[k / 3], evaluate_displacement(field), cfg.kind);
        CHECK(std::equal(again.data().begin(), again.data().end(), batch.deformed[k].data().begin()));
        const double nd = std::sqrt(sq_dist(batch.noisy[k].data(), batch.reference[k / 3].data()));
        CHECK(nd == doctest::Approx(batch.noise_norm).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::equal(batch.reference[i].data().begin(), batch.reference[i].data().end(), imgs[i].data().begin()));

    const auto summary = batch.summary();
    CHECK(summary.n_images == 4);
    CHECK(summary.pairs == batch.pairs);
}

TEST_CASE("gaussian probes compare against the smoothed baseline") {
    ProbeConfig cfg;
    cfg.n = 12;
    cfg.kind = InterpolationKind::gaussian();
    const auto imgs = images(3, 12, 2);
    const auto batch = build_probe_batch(cfg, imgs);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto s = gaussian_smooth(imgs[i], kDefaultGaussianSigma);
        CHECK(std::equal(s.data().begin(), s.data().end(), batch.reference[i].data().begin()));
    }
}

TEST_CASE("noise norm is the mean displacement of the deformed images") {
    ProbeConfig cfg;
    cfg.n = 16;
    cfg.n_transforms_per_image = 2;
    cfg.seed = 3;
    const auto imgs = images(5, 16, 3);
    const auto batch = build_probe_batch(cfg, imgs);
    std::vector<DiffeoField> fields;
    double acc = 0.0;
    for (std::size_t k = 0; k < 10; ++k) {
        fields.push_back(sample_field(DiffeoSpec{16, batch.temperature, cfg.cutoff, batch.field_seeds[k]}));
        acc += std::sqrt(sq_dist(batch.deformed[k].data(), imgs[k / 2].data()));
    }
    CHECK(batch.noise_norm == doctest::Approx(acc / 10).epsilon(1e-12));
    CHECK(calibrate_noise_norm(imgs, fields, cfg.kind) == doctest::Approx(batch.noise_norm).epsilon(1e-12));
    CHECK_THROWS_AS(calibrate_noise_norm(imgs, std::span(fields).first(7), cfg.kind), ParameterError);
}

TEST_CASE("realized displacement matches the requested delta on average") {
    ProbeConfig cfg;
    cfg.n = 32;
    cfg.cutoff = 5;
    cfg.delta = 1.5;
    cfg.n_transforms_per_image = 200;
    const auto imgs = images(2, 32, 4);
    const auto batch = build_probe_batch(cfg, imgs);
    double ms = 0.0;
    for (auto s : batch.field_seeds) {
        const double d = realized_delta(sample_field(DiffeoSpec{32, batch.temperature, 5, s}));
        ms += d * d;
    }
    ms /= static_cast<double>(batch.field_seeds.size());
    // 400 draws of a chi^2 with 2 * 15 degrees of freedom (unequal weights): well within 10%.
    CHECK(std::abs(ms / (1.5 * 1.5) - 1.0) < 0.1);
}

TEST_CASE("identity predictor with mean aggregation has a closed form") {
    ProbeConfig cfg;
    cfg.n = 16;
    cfg.cutoff = 4;
    cfg.delta = 1.0;
    cfg.n_transforms_per_image = 3;
    cfg.aggregation = Aggregation::Mean;
    cfg.seed = 11;
    const auto imgs = images(6, 16, 5);
    const auto f = LinearPredictor::identity(256);
    const auto batch = build_probe_batch(cfg, imgs);
    const auto r = compute_stability(f, cfg, imgs);

    double num = 0.0;
    for (std::size_t k = 0; k < batch.deformed.size(); ++k) num += sq_dist(batch.deformed[k].data(), imgs[k / 3].data());
    num /= static_cast<double>(batch.deformed.size());
    double den = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = i + 1; j < 6; ++j, ++pairs) den += sq_dist(imgs[i].data(), imgs[j].data());
    den /= pairs;

    CHECK(r.noise_numerator == doctest::Approx(batch.noise_norm * batch.noise_norm).epsilon(1e-12));
    CHECK(r.d_f == doctest::Approx(num / den).epsilon(1e-12));
    CHECK(r.g_f == doctest::Approx(batch.noise_norm * batch.noise_norm / den).epsilon(1e-12));
    CHECK(r.r_f == doctest::Approx(num / (batch.noise_norm * batch.noise_norm)).epsilon(1e-12));
    // Jensen: mean of squares over squared mean.
    CHECK(r.r_f >= 1.0);
    CHECK(r.r_f == doctest::Approx(r.d_f / r.g_f).epsilon(1e-14));
    CHECK(r.predictor == "identity");
    CHECK(r.n_pairs == 15);
    CHECK(r.n_images == 6);
}

TEST_CASE("stabilities are invariant to output scale") {
    ProbeConfig cfg;
    cfg.n = 12;
    const auto imgs = images(5, 12, 6);
    const auto lin = LinearPredictor::random_gaussian(7, 144, 2);
    const ScaledPredictor big(lin, 37.0);
    const auto a = compute_stability(lin, cfg, imgs);
    const auto b = compute_stability(big, cfg, imgs);
    CHECK(a.d_f == doctest::Approx(b.d_f).epsilon(1e-10));
    CHECK(a.g_f == doctest::Approx(b.g_f).epsilon(1e-10));
    CHECK(a.r_f == doctest::Approx(b.r_f).epsilon(1e-10));
}

TEST_CASE("reports are deterministic in the seed") {
    ProbeConfig cfg;
    cfg.n = 12;
    cfg.seed = 5;
    const auto imgs = images(4, 12, 7);
    const RandomFeaturePredictor f(4, 144, 32, RandomFeaturePredictor::Activation::ReLU, 1);
    const auto a = compute_stability(f, cfg, imgs);
    const auto b = compute_stability(f, cfg, imgs);
    CHECK(a.r_f == b.r_f);
    CHECK(a.d_f == b.d_f);
    cfg.seed = 6;
    CHECK(compute_stability(f, cfg, imgs).r_f != a.r_f);
}

TEST_CASE("degenerate predictors are reported, not divided by") {
    ProbeConfig cfg;
    cfg.n = 8;
    const auto imgs = images(3, 8, 8);
    CHECK_THROWS_AS(compute_stability(ConstantPredictor{}, cfg, imgs), DegenerateError);
}

TEST_CASE("report assembly checks its inputs") {
    ProbeConfig cfg;
    cfg.n = 8;
    const auto imgs = images(3, 8, 9);
    const auto batch = build_probe_batch(cfg, imgs);
    const auto f = LinearPredictor::identity(64);
    const auto fr = evaluate_all(f, batch.reference);
    const auto fd = evaluate_all(f, batch.deformed);
    const auto fn = evaluate_all(f, batch.noisy);
    CHECK_NOTHROW(assemble_report(batch, fr, fd, fn, "x"));
    CHECK_THROWS_AS(assemble_report(batch, std::span(fr).first(2), fd, fn, "x"), DataError);
    auto summary = batch.summary();
    summary.pairs.emplace_back(0, 3);
    CHECK_THROWS_AS(assemble_report(summary, fr, fd, fn, "x"), DataError);
    auto short_row = fd;
    short_row[0].pop_back();
    CHECK_THROWS_AS(assemble_report(batch, fr, short_row, fn, "x"), DataError);
    CHECK_THROWS_AS(build_probe_batch(cfg, std::span(imgs).first(1)), ParameterError);
    const std::vector<Image> wrong{random_image(1, 9, 1), random_image(1, 9, 2)};
    CHECK_THROWS_AS(build_probe_batch(cfg, wrong), ParameterError);
}

TEST_CASE("predictors") {
    const auto id = LinearPredictor::identity(3);
    CHECK(id.evaluate(std::vector<double>{1.0, -2.0, 3.0}) == std::vector<double>{1.0, -2.0, 3.0});
    CHECK_THROWS_AS(id.evaluate(std::vector<double>{1.0}), ParameterError);
    CHECK_THROWS_AS(LinearPredictor(2, 2, {1.0}), ParameterError);
    const LinearPredictor m(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(m.evaluate(std::vector<double>{1, 0, -1}) == std::vector<double>{-2, -2});

    const auto g1 = LinearPredictor::random_gaussian(3, 50, 4), g2 = LinearPredictor::random_gaussian(3, 50, 4);
    const std::vector<double> x(50, 1.0);
    CHECK(g1.evaluate(x) == g2.evaluate(x));

    const RandomFeaturePredictor t(2, 50, 16, RandomFeaturePredictor::Activation::Tanh, 3);
    CHECK(t.name() == "random-features-tanh");
    CHECK(t.output_dim() == 2);
    CHECK(t.evaluate(x).size() == 2);
    // Odd activation with no bias: f(-x) = -f(x).
    const std::vector<double> nx(50, -1.0);
    CHECK(t.evaluate(nx)[0] == doctest::Approx(-t.evaluate(x)[0]).epsilon(1e-14));
}

TEST_CASE("log average") {
    const std::vector<StabilityReport> rs{synthetic(1.0, 4.0), synthetic(4.0, 1.0, 3)};
    const auto avg = log_average(rs);
    CHECK(avg.d_f == doctest::Approx(std::exp((0.0 + 3 * std::log(4.0)) / 4)));
    CHECK(avg.g_f == doctest::Approx(std::exp((std::log(4.0) + 0.0) / 4)));
    CHECK(avg.r_f == doctest::Approx(avg.d_f / avg.g_f));
    CHECK(avg.realizations == 4);
    CHECK(avg.excluded_realizations == 0);

    const std::vector<StabilityReport> with_zero{synthetic(0.0, 1.0), synthetic(2.0, 1.0)};
    const auto z = log_average(with_zero);
    CHECK(z.realizations == 1);
    CHECK(z.excluded_realizations == 1);
    CHECK(z.d_f == doctest::Approx(2.0));

    const std::vector<StabilityReport> all_zero{synthetic(0.0, 1.0)};
    CHECK_THROWS_AS(log_average(all_zero), DegenerateError);
    CHECK_THROWS_AS(log_average({}), ParameterError);
}

TEST_CASE("delta sweep and CSV") {
    ProbeConfig cfg;
    cfg.n = 12;
    const auto imgs = images(4, 12, 10);
    const auto f = LinearPredictor::random_gaussian(5, 144, 1);
    const std::vector<double> deltas{0.5, 1.0, 2.0};
    const auto sweep = stability_vs_delta_sweep(f, deltas, cfg, imgs);
    REQUIRE(sweep.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(sweep[i].delta == deltas[i]);
    // Larger deformations move a linear predictor further.
    CHECK(sweep[0].d_f < sweep[2].d_f);

    const auto csv = sweep_to_csv(sweep);
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    CHECK(line == "delta,temperature,cutoff,interpolation,aggregation,D_f,G_f,R_f,noise_norm,n_images,realizations");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 3);

    const std::vector<double> bad{1.0, 0.5};
    CHECK_THROWS_AS(stability_vs_delta_sweep(f, bad, cfg, imgs), ParameterError);
    const std::vector<double> neg{-1.0};
    CHECK_THROWS_AS(stability_vs_delta_sweep(f, neg, cfg, imgs), ParameterError);
}

TEST_CASE("white noise images") {
    const auto a = white_noise_images(3, 2, 10, 4);
    const auto b = white_noise_images(3, 2, 10, 4);
    REQUIRE(a.size() == 3);
    CHECK(a[0].channels() == 2);
    CHECK(std::equal(a[2].data().begin(), a[2].data().end(), b[2].data().begin()));
    double s = 0.0, ss = 0.0;
    std::size_t count = 0;
    for (const auto& img : white_noise_images(50, 1, 16, 5))
        for (double v : img.data()) {
            s += v;
            ss += v * v;
            ++count;
        }
    CHECK(std::abs(s / count) < 4.0 / std::sqrt(double(count)));
    CHECK(std::abs(ss / count - 1.0) < 4.0 * std::sqrt(2.0 / count));
}

}
