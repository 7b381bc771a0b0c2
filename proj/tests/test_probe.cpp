#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "diffeo/errors.hpp"
#include "diffeo/fileutil.hpp"
#include "diffeo/npy.hpp"
#include "diffeo/probe.hpp"
#include "test_support.hpp"

using namespace diffeo;
using diffeo::testing::random_image;
using diffeo::testing::TempDir;

namespace {

std::vector<Image> images(std::size_t count, int channels, int n) {
    std::vector<Image> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(random_image(channels, n, 300 + i));
    return out;
}

ProbeConfig small_config() {
    ProbeConfig c;
    c.n = 12;
    c.cutoff = 4;
    c.delta = 0.9;
    c.n_transforms_per_image = 2;
    c.seed = 21;
    return c;
}

}  // namespace

TEST_SUITE("probe") {

TEST_CASE("emit writes protocol shapes and a self-consistent manifest") {
    TempDir dir("emit");
    const auto imgs = images(5, 3, 12);
    const auto m = probe::emit(small_config(), imgs, dir.path());
    CHECK(npy::load(dir / probe::kInputReference).shape == std::vector<std::size_t>{5, 3, 12, 12});
    CHECK(npy::load(dir / probe::kInputDeformed).shape == std::vector<std::size_t>{10, 3, 12, 12});
    CHECK(npy::load(dir / probe::kInputNoisy).shape == std::vector<std::size_t>{10, 3, 12, 12});
    CHECK(m.at("inputs").at(probe::kInputDeformed).at("sha256") == sha256_hex(read_file(dir / probe::kInputDeformed)));
    CHECK(m.at("n_rows") == 10);
    CHECK(m.at("field_seeds").size() == 10);
    CHECK(m.at("integrity").at("digest") == probe::manifest_digest(m));
    // The digest ignores the integrity entry itself.
    auto copy = m;
    copy["integrity"]["digest"] = "zz";
    CHECK(probe::manifest_digest(copy) == probe::manifest_digest(m));
    const auto s = probe::read_manifest(dir.path());
    CHECK(s.n_images == 5);
    CHECK(s.pairs.size() == 10);
    CHECK(s.config.n_transforms_per_image == 2);
}

TEST_CASE("collect reproduces the in-process report exactly") {
    TempDir dir("closure");
    const auto imgs = images(6, 1, 12);
    const auto cfg = small_config();
    const RandomFeaturePredictor f(5, 144, 24, RandomFeaturePredictor::Activation::ReLU, 8);
    probe::emit(cfg, imgs, dir.path());
    probe::run_local_predictor(f, dir.path());
    CHECK(npy::load(dir / probe::kOutputDeformed).shape == std::vector<std::size_t>{12, 5});
    const auto external = probe::collect(dir.path());
    const auto local = compute_stability(f, cfg, imgs);
    CHECK(external.d_f == local.d_f);
    CHECK(external.g_f == local.g_f);
    CHECK(external.r_f == local.r_f);
    CHECK(external.noise_norm == local.noise_norm);
    CHECK(external.predictor == "external");
}

TEST_CASE("tampering with the manifest is detected") {
    TempDir dir("tamper");
    probe::emit(small_config(), images(3, 1, 12), dir.path());
    auto m = read_json(dir / probe::kManifest);
    m["noise_norm"] = m["noise_norm"].get<double>() * 1.01;
    write_json(dir / probe::kManifest, m);
    CHECK_THROWS_AS(probe::read_manifest(dir.path()), IntegrityError);

    m.erase("integrity");
    write_json(dir / probe::kManifest, m);
    CHECK_THROWS_AS(probe::read_manifest(dir.path()), IntegrityError);

    // A correctly re-signed manifest with an unknown version is still refused.
    m["protocol_version"] = 2;
    m["integrity"] = {{"algorithm", "sha256"}, {"digest", probe::manifest_digest(m)}};
    write_json(dir / probe::kManifest, m);
    CHECK_THROWS_AS(probe::read_manifest(dir.path()), DataError);
}

TEST_CASE("key order does not change the digest") {
    json a;
    a["b"] = 1;
    a["a"] = {{"y", 2.5}, {"x", "s"}};
    json b;
    b["a"] = {{"x", "s"}, {"y", 2.5}};
    b["b"] = 1;
    CHECK(probe::manifest_digest(a) == probe::manifest_digest(b));
    CHECK(probe::manifest_digest(a) == sha256_hex(R"({"a":{"x":"s","y":2.5},"b":1})"));
}

TEST_CASE("digest agrees with a Python consumer") {
#ifdef DIFFEO_PYTHON
    TempDir dir("pydigest");
    probe::emit(small_config(), images(3, 1, 12), dir.path());
    {
        std::ofstream s(dir / "d.py");
        s << "import json, hashlib, sys\n"
             "m = json.load(open(sys.argv[1] + '/probe_manifest.json'))\n"
             "d = m.pop('integrity')['digest']\n"
             "h = hashlib.sha256(json.dumps(m, sort_keys=True, separators=(',', ':'), ensure_ascii=False)"
             ".encode()).hexdigest()\n"
             "sys.exit(0 if h == d else 1)\n";
    }
    const std::string cmd = std::string(DIFFEO_PYTHON) + " " + (dir / "d.py").string() + " " + dir.path().string();
    CHECK(std::system(cmd.c_str()) == 0);
#else
    MESSAGE("python not available; skipped");
#endif
}

TEST_CASE("output files are validated") {
    TempDir dir("outputs");
    const auto cfg = small_config();
    probe::emit(cfg, images(3, 1, 12), dir.path());
    try {
        probe::collect(dir.path());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(probe::kOutputReference) != std::string::npos);
    }

    probe::run_local_predictor(LinearPredictor::identity(144), dir.path());
    CHECK_NOTHROW(probe::collect(dir.path()));

    const std::size_t wrong_rows[] = {5, 144};
    npy::save(dir / probe::kOutputDeformed, std::vector<double>(5 * 144, 0.0), wrong_rows);
    CHECK_THROWS_AS(probe::collect(dir.path()), DataError);

    // 1-D outputs are k = 1; trailing axes flatten.
    const std::size_t one_d[] = {6};
    npy::save(dir / "o.npy", std::vector<double>{1, 2, 3, 4, 5, 6}, one_d);
    const auto rows = probe::load_outputs(dir / "o.npy", 6);
    CHECK(rows[4] == std::vector<double>{5});
    const std::size_t three_d[] = {2, 2, 3};
    npy::save(dir / "t.npy", std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, three_d);
    CHECK(probe::load_outputs(dir / "t.npy", 2)[1] == std::vector<double>{6, 7, 8, 9, 10, 11});

    const std::size_t s2[] = {2, 1};
    npy::save(dir / "nan.npy", std::vector<double>{1.0, NAN}, s2);
    CHECK_THROWS_AS(probe::load_outputs(dir / "nan.npy", 2), DataError);

    const std::vector<std::vector<double>> ragged{{1.0}, {1.0, 2.0}};
    CHECK_THROWS_AS(probe::write_outputs(dir / "r.npy", ragged), ParameterError);
}

}
