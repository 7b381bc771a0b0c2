#include <doctest.h>

#include <fstream>

#include "diffeo/errors.hpp"
#include "diffeo/npy.hpp"
#include "diffeo/serialize.hpp"
#include "test_support.hpp"

using namespace diffeo;
using diffeo::testing::TempDir;

TEST_SUITE("serialize") {

TEST_CASE("spec round trip") {
    const DiffeoSpec s{48, 1.25e-3, 7, 18446744073709551615ULL};
    const auto j = to_json(s);
    CHECK(j.dump() == R"({"n":48,"temperature":0.00125,"cutoff":7,"seed":18446744073709551615})");
    const auto back = spec_from_json(j);
    CHECK(back.n == 48);
    CHECK(back.temperature == 1.25e-3);
    CHECK(back.cutoff == 7);
    CHECK(back.seed == s.seed);
    CHECK_THROWS_AS(spec_from_json(json{{"n", 4}}), DataError);
    CHECK_THROWS_AS(spec_from_json(json{{"n", "x"}, {"temperature", 0}, {"cutoff", 1}, {"seed", 0}}), DataError);
    CHECK_THROWS_AS(spec_from_json(json{{"n", 4}, {"temperature", 0}, {"cutoff", 9}, {"seed", 0}}), ParameterError);
}

TEST_CASE("validity report keeps absent bounds as null") {
    const DiffeoSpec s{16, 0.0, 1, 0};
    const auto j = to_json(validity(s, sample_field(s)));
    CHECK(j.at("T_lower").is_null());
    CHECK(j.at("T_upper").is_null());
    CHECK(j.at("is_bijective").get<bool>());
    const DiffeoSpec s3{16, 1e-3, 3, 0};
    const auto j3 = to_json(validity(s3, sample_field(s3)));
    CHECK(j3.at("T_upper").get<double>() == doctest::Approx(*temperature_upper_bound(3)));
}

TEST_CASE("interpolation and probe config round trip") {
    CHECK(to_json(InterpolationKind::bilinear()).dump() == R"({"method":"bilinear"})");
    const auto g = interpolation_from_json(to_json(InterpolationKind::gaussian(0.7)));
    CHECK(g.is_gaussian());
    CHECK(g.sigma == 0.7);
    CHECK_THROWS_AS(interpolation_from_json(json{{"method", "nearest"}}), DataError);

    ProbeConfig c;
    c.n = 20;
    c.cutoff = 6;
    c.delta = 0.3;
    c.kind = InterpolationKind::gaussian();
    c.n_transforms_per_image = 4;
    c.aggregation = Aggregation::Mean;
    c.seed = 99;
    const auto back = probe_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    auto bad = to_json(c);
    bad["aggregation"] = "max";
    CHECK_THROWS_AS(probe_config_from_json(bad), DataError);
    bad = to_json(c);
    bad.erase("interpolation");
    CHECK_THROWS_AS(probe_config_from_json(bad), DataError);
}

TEST_CASE("stability report keys") {
    StabilityReport r;
    r.d_f = 0.5;
    r.g_f = 0.25;
    r.r_f = 2.0;
    const auto j = to_json(r);
    for (const char* k : {"D_f", "G_f", "R_f", "noise_norm", "denominator", "delta", "temperature", "cutoff",
                          "interpolation", "aggregation", "median_scope", "n_images", "realizations"})
        CHECK(j.contains(k));
    CHECK(j.at("R_f").get<double>() == 2.0);
}

TEST_CASE("field files round trip") {
    TempDir dir("field");
    const auto f = sample_field(DiffeoSpec{24, 2e-3, 5, 31});
    save_field(f, dir.path(), "f0");
    CHECK(std::filesystem::exists(dir / "f0_C.npy"));
    const auto c = npy::load(dir / "f0_C.npy");
    CHECK(c.shape == std::vector<std::size_t>{5, 5});
    // Entry [i-1, j-1] is mode (i, j).
    CHECK(c.data[1 * 5 + 2] == f.c(2, 3));
    const auto back = load_field(dir / "f0.json");
    CHECK(back.c_matrix() == f.c_matrix());
    CHECK(back.d_matrix() == f.d_matrix());
    CHECK(back.spec().seed == 31);
    CHECK(back.spec().temperature == 2e-3);

    // A coefficient outside the cutoff disk is rejected on load.
    auto cm = f.c_matrix();
    cm[4 * 5 + 4] = 1.0;
    const std::size_t shape[] = {5, 5};
    npy::save(dir / "f0_C.npy", cm, shape);
    CHECK_THROWS_AS(load_field(dir / "f0.json"), DataError);
    const std::size_t wrong[] = {4, 5};
    npy::save(dir / "f0_C.npy", std::vector<double>(20, 0.0), wrong);
    CHECK_THROWS_AS(load_field(dir / "f0.json"), DataError);
    std::filesystem::remove(dir / "f0_D.npy");
    CHECK_THROWS_AS(load_field(dir / "f0.json"), DataError);
}

TEST_CASE("grid files round trip") {
    TempDir dir("grid");
    const auto g = evaluate_displacement(sample_field(DiffeoSpec{10, 1e-2, 4, 2}));
    save_grid(g, dir / "g.npy");
    CHECK(npy::load(dir / "g.npy").shape == std::vector<std::size_t>{2, 10, 10});
    const auto back = load_grid(dir / "g.npy");
    CHECK(back.n == 10);
    CHECK(back.tau_u == g.tau_u);
    CHECK(back.tau_v == g.tau_v);
    const std::size_t bad[] = {3, 10, 10};
    npy::save(dir / "b.npy", std::vector<double>(300, 0.0), bad);
    CHECK_THROWS_AS(load_grid(dir / "b.npy"), DataError);
}

TEST_CASE("JSON files") {
    TempDir dir("json");
    write_json(dir / "a.json", json{{"b", 1}, {"a", 2}});
    const auto j = read_json(dir / "a.json");
    // Insertion order survives.
    CHECK(j.dump() == R"({"b":1,"a":2})");
    {
        std::ofstream f(dir / "bad.json");
        f << "{not json";
    }
    CHECK_THROWS_AS(read_json(dir / "bad.json"), DataError);
    CHECK_THROWS_AS(read_json(dir / "missing.json"), DataError);
}

}
