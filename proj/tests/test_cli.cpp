#include <doctest.h>

#include <fstream>
#include <sstream>

#include "diffeo/cli.hpp"
#include "diffeo/fileutil.hpp"
#include "diffeo/image_io.hpp"
#include "diffeo/npy.hpp"
#include "diffeo/probe.hpp"
#include "diffeo/serialize.hpp"
#include "test_support.hpp"

using namespace diffeo;
using diffeo::testing::random_image;
using diffeo::testing::TempDir;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "diffeo");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 2") {
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"frobnicate"}).code == cli::kExitUsage);
    CHECK(run({"--help"}).code == cli::kExitOk);
    CHECK(run({"--version"}).code == cli::kExitOk);
    TempDir dir("cliusage");
    const auto out = dir.path().string();
    // Neither --T nor --delta.
    const auto r = run({"sample", "--out-dir", out});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("--T or --delta") != std::string::npos);
    CHECK(run({"sample", "--T", "1e-3", "--delta", "1", "--out-dir", out}).code == cli::kExitUsage);
    CHECK(run({"sample", "--n", "abc", "--T", "0", "--out-dir", out}).code == cli::kExitUsage);
    CHECK(run({"sample", "--T", "-1", "--out-dir", out}).code == cli::kExitUsage);
    CHECK(run({"sample", "--T", "0", "--c", "99", "--n", "8", "--out-dir", out}).code == cli::kExitUsage);
    CHECK(run({"stability", "--white-noise", "4", "--n", "8", "--interpolation", "bicubic", "--out-dir", out}).code ==
          cli::kExitUsage);
}

TEST_CASE("sample writes fields, grids, validity and a manifest") {
    TempDir dir("clisample");
    const auto r = run({"sample", "--n", "16", "--delta", "1", "--c", "4", "--count", "2", "--seed", "5", "--out-dir",
                        dir.path().string()});
    REQUIRE(r.code == cli::kExitOk);
    for (const char* f : {"sample_0000_field.json", "sample_0000_field_C.npy", "sample_0001_grid.npy",
                          "sample_0001_validity.json", "run_manifest.json"})
        CHECK(std::filesystem::exists(dir / f));

    const auto field = load_field(dir / "sample_0001_field.json");
    CHECK(field.spec().seed == derive_seed(5, seed_domain::field, 1));
    CHECK(field.spec().temperature == doctest::Approx(temperature_for_delta(16, 4, 1.0)).epsilon(1e-15));
    const auto fresh = sample_field(field.spec());
    CHECK(fresh.c_matrix() == field.c_matrix());
    const auto grid = load_grid(dir / "sample_0001_grid.npy");
    CHECK(grid.tau_u == evaluate_displacement(fresh).tau_u);

    const auto m = read_json(dir / "run_manifest.json");
    CHECK(m.at("command") == "sample");
    CHECK(m.at("seed") == 5);
    CHECK(m.at("config").at("n") == 16);
    CHECK(m.at("outputs").size() == 10);
    for (const auto& entry : m.at("outputs"))
        CHECK(entry.at("sha256") == sha256_hex(read_file(dir / entry.at("path").get<std::string>())));
}

TEST_CASE("runs are reproducible") {
    TempDir a("clirep_a"), b("clirep_b");
    for (auto* d : {&a, &b})
        REQUIRE(run({"sample", "--n", "12", "--T", "2e-3", "--c", "3", "--count", "3", "--seed", "9", "--out-dir",
                     d->path().string()})
                    .code == 0);
    for (const char* f : {"sample_0002_field_D.npy", "sample_0002_grid.npy", "sample_0002_validity.json"})
        CHECK(read_file(a / f) == read_file(b / f));
}

TEST_CASE("JSON config supplies defaults; flags win") {
    TempDir dir("cliconfig");
    {
        std::ofstream c(dir / "cfg.json");
        c << R"({"n": 10, "T": 0.001, "c": 3, "count": 1, "seed": 4})";
    }
    const auto out = (dir / "o").string();
    REQUIRE(run({"sample", "--config", (dir / "cfg.json").string(), "--count", "2", "--out-dir", out}).code == 0);
    CHECK(std::filesystem::exists(dir.path() / "o" / "sample_0001_field.json"));
    const auto m = read_json(dir.path() / "o" / "run_manifest.json");
    CHECK(m.at("config").at("n") == 10);
    CHECK(m.at("config").at("count") == 2);
    CHECK(m.at("seed") == 4);

    // Sections keyed by subcommand name.
    {
        std::ofstream c(dir / "sec.json");
        c << R"({"sample": {"n": 9, "T": 0.0}})";
    }
    const auto out2 = (dir / "o2").string();
    REQUIRE(run({"sample", "--config", (dir / "sec.json").string(), "--out-dir", out2}).code == 0);
    CHECK(read_json(dir.path() / "o2" / "run_manifest.json").at("config").at("n") == 9);

    {
        std::ofstream c(dir / "bad.json");
        c << "{oops";
    }
    CHECK(run({"sample", "--config", (dir / "bad.json").string(), "--T", "0", "--out-dir", out}).code ==
          cli::kExitUsage);
    CHECK(run({"sample", "--config", (dir / "none.json").string(), "--T", "0", "--out-dir", out}).code ==
          cli::kExitUsage);
}

TEST_CASE("render applies a sampled field") {
    TempDir dir("clirender");
    const auto img = random_image(1, 12, 3);
    save_image_npy(img, dir / "img.npy");
    REQUIRE(run({"sample", "--n", "12", "--T", "3e-3", "--c", "3", "--seed", "1", "--out-dir", dir.path().string()})
                .code == 0);
    const auto r = run({"render", "--image", (dir / "img.npy").string(), "--field",
                        (dir / "sample_0000_field.json").string(), "--format", "npy", "--out-dir",
                        (dir / "r").string()});
    REQUIRE(r.code == 0);
    const auto out = load_image_npy(dir.path() / "r" / "deformed_img.npy");
    const auto expected = apply_diffeo(img, evaluate_displacement(load_field(dir / "sample_0000_field.json")),
                                       InterpolationKind::bilinear());
    CHECK(std::equal(out.data().begin(), out.data().end(), expected.data().begin()));

    CHECK(run({"render", "--image", (dir / "missing.npy").string(), "--field",
               (dir / "sample_0000_field.json").string(), "--out-dir", (dir / "r").string()})
              .code == cli::kExitData);

    const auto montage = run({"render", "--image", (dir / "img.npy").string(), "--montage", "--T-list", "1e-4",
                              "1e-2", "--c-list", "3", "5", "--out-dir", (dir / "m").string()});
    CHECK(montage.code == 0);
    CHECK(std::filesystem::exists(dir.path() / "m" / "montage.png"));
    CHECK(read_json(dir.path() / "m" / "montage.json").at("cells").size() == 4);
}

TEST_CASE("phase diagram table") {
    TempDir dir("cliphase");
    const auto r = run({"phase-diagram", "--n", "16", "--T-list", "1e-4", "1e-2", "--c-list", "3", "--samples", "5",
                        "--out-dir", dir.path().string()});
    REQUIRE(r.code == 0);
    std::istringstream csv(read_file(dir / "phase_diagram.csv"));
    std::string header, line;
    std::getline(csv, header);
    CHECK(header == "T,c,samples,median_xi_max,p_bijective,delta,asymptotic_delta,T_lower,T_upper,predicted_max_xi");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("stability report and sweep") {
    TempDir dir("clistab");
    const auto r = run({"stability", "--white-noise", "6", "--n", "8", "--predictor", "identity", "--aggregation",
                        "mean", "--delta", "1", "--out-dir", dir.path().string()});
    REQUIRE(r.code == 0);
    const auto rep = read_json(dir / "stability_report.json");
    CHECK(rep.at("R_f").get<double>() >= 1.0);
    CHECK(rep.at("aggregation") == "mean");
    CHECK(rep.at("per_realization").size() == 1);

    const auto s = run({"stability", "--white-noise", "6", "--n", "8", "--predictor", "linear", "--k", "3", "--delta",
                        "0.5", "1", "--realizations", "2", "--out-dir", (dir / "s").string()});
    REQUIRE(s.code == 0);
    std::istringstream csv(read_file(dir.path() / "s" / "stability_sweep.csv"));
    std::string line;
    int rows = -1;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 2);

    CHECK(run({"stability", "--images", (dir / "none.png").string(), "--out-dir", dir.path().string()}).code ==
          cli::kExitData);
}

TEST_CASE("probe round trip through the command line") {
    TempDir dir("cliprobe");
    const auto d = dir.path().string();
    REQUIRE(run({"probe", "emit", "--white-noise", "5", "--n", "8", "--delta", "1", "--seed", "3", "--out-dir", d})
                .code == 0);
    CHECK(std::filesystem::exists(dir / probe::kManifest));
    // Outputs not there yet.
    CHECK(run({"probe", "collect", "--dir", d, "--out-dir", d}).code == cli::kExitData);
    REQUIRE(run({"probe", "respond", "--dir", d, "--predictor", "identity"}).code == 0);
    REQUIRE(run({"probe", "collect", "--dir", d, "--out-dir", d}).code == 0);
    CHECK(read_json(dir / "stability_report.json").at("R_f").get<double>() > 0.0);

    // A constant external predictor is degenerate.
    const auto s = probe::read_manifest(dir.path());
    const std::size_t rows = s.n_images * s.config.n_transforms_per_image;
    const std::size_t sr[] = {s.n_images, 1}, st[] = {rows, 1};
    npy::save(dir / probe::kOutputReference, std::vector<double>(s.n_images, 1.0), sr);
    npy::save(dir / probe::kOutputDeformed, std::vector<double>(rows, 1.0), st);
    npy::save(dir / probe::kOutputNoisy, std::vector<double>(rows, 1.0), st);
    CHECK(run({"probe", "collect", "--dir", d, "--out-dir", d}).code == cli::kExitDegenerate);

    // Editing the manifest breaks the integrity check.
    auto m = read_json(dir / probe::kManifest);
    m["n_images"] = 4;
    write_json(dir / probe::kManifest, m);
    CHECK(run({"probe", "collect", "--dir", d, "--out-dir", d}).code == cli::kExitData);
}

TEST_CASE("stripe experiment writes runs and a slope summary") {
    TempDir dir("clistripe");
    const auto r = run({"stripe", "--d", "5", "--P-list", "16", "32", "64", "--seeds", "1", "--width", "8",
                        "--n-probe", "200", "--n-test", "200", "--out-dir", dir.path().string()});
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(dir / "stripe_runs.csv"));
    const auto s = read_json(dir / "stripe_summary.json");
    CHECK(s.contains("slope"));
    CHECK(run({"stripe", "--activation", "tanh", "--out-dir", dir.path().string()}).code == cli::kExitUsage);
}

}
