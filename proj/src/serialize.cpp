#include "diffeo/serialize.hpp"

#include <cmath>

#include "diffeo/errors.hpp"
#include "diffeo/fileutil.hpp"
#include "diffeo/npy.hpp"

namespace diffeo {

namespace {

template <class T>
T field_as(const json& j, const char* key) {
    if (!j.contains(key)) throw DataError(std::string("missing JSON key '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(std::string("bad JSON value for '") + key + "': " + e.what());
    }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const DiffeoSpec& spec) {
    return json{{"n", spec.n}, {"temperature", spec.temperature}, {"cutoff", spec.cutoff}, {"seed", spec.seed}};
}

DiffeoSpec spec_from_json(const json& j) {
    DiffeoSpec s;
    s.n = field_as<int>(j, "n");
    s.temperature = field_as<double>(j, "temperature");
    s.cutoff = field_as<int>(j, "cutoff");
    s.seed = field_as<std::uint64_t>(j, "seed");
    s.validate();
    return s;
}

json to_json(const ValidityReport& r) {
    return json{{"delta", r.delta},
                {"realized_delta", r.realized_delta},
                {"grad_norm_sq", r.grad_norm_sq},
                {"xi_max", r.xi_max},
                {"is_bijective", r.is_bijective},
                {"T_lower", optional_number(r.t_lower)},
                {"T_upper", optional_number(r.t_upper)},
                {"xi_clamped", r.xi_clamped}};
}

json to_json(const InterpolationKind& kind) {
    json j{{"method", to_string(kind.method)}};
    if (kind.is_gaussian()) j["sigma"] = kind.sigma;
    return j;
}

InterpolationKind interpolation_from_json(const json& j) {
    InterpolationKind k;
    try {
        k.method = parse_method(field_as<std::string>(j, "method"));
    } catch (const ParameterError& e) {
        throw DataError(e.what());
    }
    if (j.contains("sigma")) k.sigma = field_as<double>(j, "sigma");
    k.validate();
    return k;
}

json to_json(const ProbeConfig& c) {
    return json{{"n", c.n},
                {"cutoff", c.cutoff},
                {"delta", c.delta},
                {"interpolation", to_json(c.kind)},
                {"n_transforms_per_image", c.n_transforms_per_image},
                {"aggregation", to_string(c.aggregation)},
                {"seed", c.seed}};
}

ProbeConfig probe_config_from_json(const json& j) {
    ProbeConfig c;
    c.n = field_as<int>(j, "n");
    c.cutoff = field_as<int>(j, "cutoff");
    c.delta = field_as<double>(j, "delta");
    if (!j.contains("interpolation")) throw DataError("missing JSON key 'interpolation'");
    c.kind = interpolation_from_json(j.at("interpolation"));
    c.n_transforms_per_image = field_as<int>(j, "n_transforms_per_image");
    try {
        c.aggregation = parse_aggregation(field_as<std::string>(j, "aggregation"));
    } catch (const ParameterError& e) {
        throw DataError(e.what());
    }
    c.seed = field_as<std::uint64_t>(j, "seed");
    c.validate();
    return c;
}

json to_json(const StabilityReport& r) {
    return json{{"D_f", r.d_f},
                {"G_f", r.g_f},
                {"R_f", r.r_f},
                {"noise_norm", r.noise_norm},
                {"diffeo_numerator", r.diffeo_numerator},
                {"noise_numerator", r.noise_numerator},
                {"denominator", r.denominator},
                {"delta", r.delta},
                {"temperature", r.temperature},
                {"n", r.n},
                {"cutoff", r.cutoff},
                {"interpolation", to_json(r.kind)},
                {"aggregation", to_string(r.aggregation)},
                {"median_scope", "joint over all (image, transform) pairs"},
                {"seed", r.seed},
                {"predictor", r.predictor},
                {"n_images", r.n_images},
                {"n_transforms_per_image", r.n_transforms_per_image},
                {"n_pairs", r.n_pairs},
                {"noise_norm_max_rel_error", r.noise_norm_max_rel_error},
                {"realizations", r.realizations},
                {"excluded_realizations", r.excluded_realizations}};
}

void save_field(const DiffeoField& field, const std::filesystem::path& dir, const std::string& stem) {
    const auto c = static_cast<std::size_t>(field.cutoff());
    const std::size_t shape[2] = {c, c};
    npy::save(dir / (stem + "_C.npy"), field.c_matrix(), shape);
    npy::save(dir / (stem + "_D.npy"), field.d_matrix(), shape);
    json j{{"spec", to_json(field.spec())},
           {"layout", "entry [i-1, j-1] is the coefficient of sin(i pi u) sin(j pi v)"},
           {"C", stem + "_C.npy"},
           {"D", stem + "_D.npy"}};
    write_json(dir / (stem + ".json"), j);
}

DiffeoField load_field(const std::filesystem::path& json_path) {
    const json j = read_json(json_path);
    if (!j.contains("spec")) throw DataError(json_path.string() + ": missing 'spec'");
    const DiffeoSpec spec = spec_from_json(j.at("spec"));
    const auto dir = json_path.parent_path();
    auto c = npy::load(dir / field_as<std::string>(j, "C"));
    auto d = npy::load(dir / field_as<std::string>(j, "D"));
    const auto k = static_cast<std::size_t>(spec.cutoff);
    for (const auto* a : {&c, &d})
        if (a->shape.size() != 2 || a->shape[0] != k || a->shape[1] != k)
            throw DataError(json_path.string() + ": coefficient arrays must have shape (cutoff, cutoff)");
    try {
        return DiffeoField(spec, std::move(c.data), std::move(d.data));
    } catch (const ParameterError& e) {
        throw DataError(json_path.string() + ": " + e.what());
    }
}

void save_grid(const DisplacementGrid& grid, const std::filesystem::path& path) {
    std::vector<double> data(grid.tau_u);
    data.insert(data.end(), grid.tau_v.begin(), grid.tau_v.end());
    const auto n = static_cast<std::size_t>(grid.n);
    const std::size_t shape[3] = {2, n, n};
    npy::save(path, data, shape);
}

DisplacementGrid load_grid(const std::filesystem::path& path) {
    const auto a = npy::load(path);
    if (a.shape.size() != 3 || a.shape[0] != 2 || a.shape[1] != a.shape[2] || a.shape[1] < 2)
        throw DataError(path.string() + ": displacement grid must have shape (2, n, n)");
    for (double v : a.data)
        if (!std::isfinite(v)) throw DataError(path.string() + ": displacement grid has non-finite values");
    DisplacementGrid g;
    g.n = static_cast<int>(a.shape[1]);
    const std::size_t plane = a.shape[1] * a.shape[2];
    g.tau_u.assign(a.data.begin(), a.data.begin() + static_cast<std::ptrdiff_t>(plane));
    g.tau_v.assign(a.data.begin() + static_cast<std::ptrdiff_t>(plane), a.data.end());
    return g;
}

void write_json(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": invalid JSON: " + e.what());
    }
}

}  // namespace diffeo
