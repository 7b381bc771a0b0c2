#include "diffeo/probe.hpp"

#include "diffeo/errors.hpp"
#include "diffeo/fileutil.hpp"
#include "diffeo/npy.hpp"

namespace diffeo::probe {

namespace {

namespace fs = std::filesystem;

std::string save_images(const fs::path& path, std::span<const Image> images) {
    const Image& first = images.front();
    std::vector<double> data;
    data.reserve(images.size() * first.size());
    for (const auto& img : images) data.insert(data.end(), img.data().begin(), img.data().end());
    const std::size_t shape[4] = {images.size(), static_cast<std::size_t>(first.channels()),
                                  static_cast<std::size_t>(first.n()), static_cast<std::size_t>(first.n())};
    const std::string bytes = npy::encode(data, shape);
    write_file_atomic(path, bytes);
    return sha256_hex(bytes);
}

json file_entry(const std::string& sha, std::size_t rows, const Image& like) {
    return json{{"sha256", sha},
                {"shape", {rows, like.channels(), like.n(), like.n()}}};
}

}  // namespace

std::string manifest_digest(const json& manifest) {
    nlohmann::json sorted = nlohmann::json::parse(manifest.dump());
    sorted.erase("integrity");
    return sha256_hex(sorted.dump());
}

json emit(const ProbeConfig& config, std::span<const Image> images, const fs::path& dir) {
    const ProbeBatch batch = build_probe_batch(config, images);
    fs::create_directories(dir);
    const std::size_t total = batch.deformed.size();

    json m;
    m["protocol_version"] = kProtocolVersion;
    m["config"] = to_json(config);
    m["temperature"] = batch.temperature;
    m["noise_norm"] = batch.noise_norm;
    m["noise_norm_max_rel_error"] = batch.noise_norm_max_rel_error;
    m["n_images"] = batch.reference.size();
    m["n_rows"] = total;
    m["channels"] = batch.reference.front().channels();
    m["row_layout"] = "row k of tau_x and x_noise belongs to image k / n_transforms_per_image";
    m["field_seeds"] = batch.field_seeds;
    m["inputs"] = {
        {kInputReference, file_entry(save_images(dir / kInputReference, batch.reference), batch.reference.size(),
                                     batch.reference.front())},
        {kInputDeformed, file_entry(save_images(dir / kInputDeformed, batch.deformed), total, batch.reference.front())},
        {kInputNoisy, file_entry(save_images(dir / kInputNoisy, batch.noisy), total, batch.reference.front())},
    };
    m["outputs"] = {{kOutputReference, {{"rows", batch.reference.size()}}},
                    {kOutputDeformed, {{"rows", total}}},
                    {kOutputNoisy, {{"rows", total}}}};
    m["integrity"] = {{"algorithm", "sha256"}, {"digest", manifest_digest(m)}};
    write_json(dir / kManifest, m);
    return m;
}

ProbeSummary read_manifest(const fs::path& dir) {
    const json m = read_json(dir / kManifest);
    if (!m.contains("integrity") || !m["integrity"].contains("digest"))
        throw IntegrityError(std::string(kManifest) + " has no integrity digest");
    if (m["integrity"]["digest"] != manifest_digest(m))
        throw IntegrityError(std::string(kManifest) + " was modified after emission (integrity digest mismatch)");
    if (!m.contains("protocol_version") || m["protocol_version"] != kProtocolVersion)
        throw DataError(std::string(kManifest) + ": unsupported protocol version");

    ProbeSummary s;
    try {
        s.config = probe_config_from_json(m.at("config"));
        s.temperature = m.at("temperature").get<double>();
        s.noise_norm = m.at("noise_norm").get<double>();
        s.noise_norm_max_rel_error = m.at("noise_norm_max_rel_error").get<double>();
        s.n_images = m.at("n_images").get<std::size_t>();
    } catch (const json::exception& e) {
        throw DataError(std::string(kManifest) + ": " + e.what());
    } catch (const ParameterError& e) {
        throw DataError(std::string(kManifest) + ": " + e.what());
    }
    s.pairs = denominator_pairs(s.n_images, s.config.seed);
    return s;
}

std::vector<std::vector<double>> load_outputs(const fs::path& path, std::size_t rows) {
    if (!fs::exists(path))
        throw DataError("probe output " + path.filename().string() + " is missing (expected at " + path.string() + ")");
    const auto a = npy::load(path);
    if (a.shape.empty()) throw DataError(path.filename().string() + ": scalar array, expected (batch, k)");
    if (a.shape[0] != rows)
        throw DataError(path.filename().string() + ": has " + std::to_string(a.shape[0]) + " rows, expected " +
                        std::to_string(rows));
    const std::size_t k = rows == 0 ? 0 : a.size() / rows;
    if (k == 0) throw DataError(path.filename().string() + ": empty output vectors");
    std::vector<std::vector<double>> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        out[r].assign(a.data.begin() + static_cast<std::ptrdiff_t>(r * k),
                      a.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
        for (double v : out[r])
            if (!std::isfinite(v)) throw DataError(path.filename().string() + ": non-finite predictor output");
    }
    return out;
}

void write_outputs(const fs::path& path, std::span<const std::vector<double>> rows) {
    if (rows.empty()) throw ParameterError("no predictor outputs to write");
    const std::size_t k = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * k);
    for (const auto& r : rows) {
        if (r.size() != k) throw ParameterError("predictor outputs differ in dimension");
        data.insert(data.end(), r.begin(), r.end());
    }
    const std::size_t shape[2] = {rows.size(), k};
    npy::save(path, data, shape);
}

StabilityReport collect(const fs::path& dir, const std::string& predictor) {
    const ProbeSummary s = read_manifest(dir);
    const std::size_t total = s.n_images * static_cast<std::size_t>(s.config.n_transforms_per_image);
    const auto fr = load_outputs(dir / kOutputReference, s.n_images);
    const auto fd = load_outputs(dir / kOutputDeformed, total);
    const auto fn = load_outputs(dir / kOutputNoisy, total);
    return assemble_report(s, fr, fd, fn, predictor);
}

void run_local_predictor(const Predictor& f, const fs::path& dir) {
    auto as_images = [&](const char* name) {
        const auto a = npy::load(dir / name);
        if (a.shape.size() != 4 || a.shape[2] != a.shape[3])
            throw DataError(std::string(name) + ": expected shape (batch, C, n, n)");
        const std::size_t per = a.size() / a.shape[0];
        std::vector<Image> out;
        out.reserve(a.shape[0]);
        for (std::size_t b = 0; b < a.shape[0]; ++b)
            out.emplace_back(static_cast<int>(a.shape[1]), static_cast<int>(a.shape[2]),
                             std::vector<double>(a.data.begin() + static_cast<std::ptrdiff_t>(b * per),
                                                 a.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * per)));
        return out;
    };
    write_outputs(dir / kOutputReference, evaluate_all(f, as_images(kInputReference)));
    write_outputs(dir / kOutputDeformed, evaluate_all(f, as_images(kInputDeformed)));
    write_outputs(dir / kOutputNoisy, evaluate_all(f, as_images(kInputNoisy)));
}

}  // namespace diffeo::probe
