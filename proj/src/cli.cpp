#include "diffeo/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "diffeo/diffeo_core.hpp"
#include "diffeo/errors.hpp"
#include "diffeo/fileutil.hpp"
#include "diffeo/image_io.hpp"
#include "diffeo/interpolation.hpp"
#include "diffeo/npy.hpp"
#include "diffeo/probe.hpp"
#include "diffeo/serialize.hpp"
#include "diffeo/stability.hpp"
#include "diffeo/stripe_model.hpp"

#ifndef DIFFEO_VERSION
#define DIFFEO_VERSION "dev"
#endif

namespace diffeo::cli {

namespace {

namespace fs = std::filesystem;

// JSON config: keys map to long option names. An object value whose key
// names a subcommand is a section for it; flat keys go to `default_parents`.
class JsonConfig : public CLI::Config {
public:
    std::vector<std::string> default_parents;
    std::vector<std::string> sections;

    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(input);
        } catch (const nlohmann::json::parse_error& e) {
            throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");
        std::vector<CLI::ConfigItem> items;
        walk(j, {}, true, items);
        return items;
    }

private:
    static std::string scalar(const nlohmann::ordered_json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    void walk(const nlohmann::ordered_json& obj, std::vector<std::string> parents, bool top,
              std::vector<CLI::ConfigItem>& items) const {
        for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
                auto p = parents;
                p.push_back(key);
                walk(value, p, false, items);
                continue;
            }
            if (key == "config") continue;
            CLI::ConfigItem item;
            const bool is_section = std::find(sections.begin(), sections.end(), key) != sections.end();
            item.parents = (top && !is_section) ? default_parents : parents;
            item.name = key;
            if (value.is_array())
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            else
                item.inputs.push_back(scalar(value));
            items.push_back(std::move(item));
        }
    }
};

class Recorder {
public:
    explicit Recorder(fs::path out_dir) : out_dir_(std::move(out_dir)) {}

    const fs::path& dir() const { return out_dir_; }
    fs::path path(const std::string& name) const { return out_dir_ / name; }

    void record(const std::string& name) {
        outputs_.push_back({{"path", name}, {"sha256", sha256_hex(read_file(path(name)))}});
    }
    void text(const std::string& name, const std::string& contents) {
        write_file_atomic(path(name), contents);
        record(name);
    }
    void json_file(const std::string& name, const json& j) {
        write_json(path(name), j);
        record(name);
    }

    const json& outputs() const { return outputs_; }

private:
    fs::path out_dir_;
    json outputs_ = json::array();
};

// Numbers and booleans keep their JSON type; everything else stays a string.
json typed_value(const std::string& v) {
    const json parsed = json::parse(v, nullptr, false);
    if (!parsed.is_discarded() && (parsed.is_number() || parsed.is_boolean())) return parsed;
    return v;
}

// Echo every option of the invoked command (defaults included) so the
// manifest alone reproduces the run.
json echo_options(const CLI::App* app) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name.empty()) continue;
        std::vector<std::string> values = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
        if (opt->count() == 0) {
            const std::string def = opt->get_default_str();
            if (def.empty()) {
                j[name] = nullptr;
                continue;
            }
            values = {def};
        }
        if (values.size() == 1 && opt->get_items_expected_max() <= 1) {
            j[name] = typed_value(values.front());
        } else {
            json arr = json::array();
            for (const auto& v : values) arr.push_back(typed_value(v));
            j[name] = arr;
        }
    }
    return j;
}

void write_run_manifest(Recorder& rec, const std::string& command, const CLI::App* app,
                        const std::vector<std::string>& args, std::uint64_t seed, const json& extra,
                        std::chrono::steady_clock::time_point start) {
    json m;
    m["command"] = command;
    m["tool"] = "diffeo";
    m["version"] = DIFFEO_VERSION;
    m["argv"] = args;
    m["seed"] = seed;
    m["config"] = echo_options(app);
    if (!extra.is_null()) m["derived"] = extra;
    m["outputs"] = rec.outputs();
    m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json(rec.path("run_manifest.json"), m);
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

// ---------------------------------------------------------------- commands

struct SampleArgs {
    int n = 32;
    std::optional<double> temperature;
    std::optional<double> delta;
    int cutoff = 3;
    int count = 1;
};

json cmd_sample(const SampleArgs& a, std::uint64_t seed, Recorder& rec, std::ostream& out) {
    if (a.temperature.has_value() == a.delta.has_value())
        throw ParameterError("give exactly one of --T or --delta");
    if (a.count < 1) throw ParameterError("--count must be >= 1");
    double T = 0.0;
    if (a.temperature) {
        T = *a.temperature;
    } else {
        T = temperature_for_delta(a.n, a.cutoff, *a.delta);
    }
    DiffeoSpec base{a.n, T, a.cutoff, seed};
    base.validate();

    json summary = json::array();
    for (int k = 0; k < a.count; ++k) {
        DiffeoSpec spec = base;
        spec.seed = derive_seed(seed, seed_domain::field, static_cast<std::uint64_t>(k));
        const DiffeoField field = sample_field(spec);
        std::ostringstream stem;
        stem << "sample_" << std::setw(4) << std::setfill('0') << k;
        save_field(field, rec.dir(), stem.str() + "_field");
        rec.record(stem.str() + "_field.json");
        rec.record(stem.str() + "_field_C.npy");
        rec.record(stem.str() + "_field_D.npy");
        save_grid(evaluate_displacement(field), rec.path(stem.str() + "_grid.npy"));
        rec.record(stem.str() + "_grid.npy");
        const ValidityReport v = validity(spec, field);
        json vj = to_json(v);
        vj["spec"] = to_json(spec);
        rec.json_file(stem.str() + "_validity.json", vj);
        summary.push_back({{"index", k}, {"seed", spec.seed}, {"xi_max", v.xi_max}, {"is_bijective", v.is_bijective}});
    }
    out << "sampled " << a.count << " field(s) at T=" << fmt(T) << " (delta=" << fmt(expected_delta(base))
        << ") into " << rec.dir().string() << "\n";
    return json{{"temperature", T}, {"delta", expected_delta(base)}, {"samples", summary}};
}

struct InterpArgs {
    std::string method = "bilinear";
    double sigma = kDefaultGaussianSigma;

    InterpolationKind kind() const {
        InterpolationKind k{parse_method(method), sigma};
        k.validate();
        return k;
    }
};

struct RenderArgs {
    std::vector<std::string> images;
    std::string field;
    std::string grid;
    InterpArgs interp;
    std::string format = "png";
    bool montage = false;
    std::vector<double> t_list;
    std::vector<int> c_list;
};

std::string image_ext(const std::string& format) {
    if (format == "png") return ".png";
    if (format == "npy") return ".npy";
    throw ParameterError("--format must be png or npy");
}

// Cells of an RGB montage separated by a 2-pixel frame coloured by status.
Image build_montage(const std::vector<std::vector<Image>>& cells, const std::vector<std::vector<int>>& status) {
    const int rows = static_cast<int>(cells.size());
    const int cols = static_cast<int>(cells.front().size());
    const int n = cells.front().front().n();
    const int pad = 2;
    const int cell = n + 2 * pad;
    const int side = std::max(rows, cols) * cell;
    Image m = Image::filled(3, side, 1.0);
    const double colours[3][3] = {{0.6, 0.6, 0.6}, {0.1, 0.75, 0.2}, {0.85, 0.1, 0.1}};
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const Image& img = cells[r][c];
            const auto* col = colours[status[r][c]];
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x) {
                    const int gy = r * cell + y, gx = c * cell + x;
                    const bool inside = y >= pad && y < pad + n && x >= pad && x < pad + n;
                    for (int ch = 0; ch < 3; ++ch) {
                        double v = col[ch];
                        if (inside) v = img.at(std::min(ch, img.channels() - 1), y - pad, x - pad);
                        m.set(ch, gy, gx, v);
                    }
                }
        }
    return m;
}

json cmd_render(const RenderArgs& a, std::uint64_t seed, Recorder& rec, std::ostream& out) {
    if (a.images.empty()) throw ParameterError("--image is required");
    const InterpolationKind kind = a.interp.kind();
    const std::string ext = image_ext(a.format);
    json derived = json::object();

    if (!a.montage) {
        if (a.field.empty() == a.grid.empty()) throw ParameterError("give exactly one of --field or --grid");
        const DisplacementGrid grid = a.field.empty() ? load_grid(a.grid) : evaluate_displacement(load_field(a.field));
        for (const auto& p : a.images) {
            const Image img = load_image(p);
            if (img.n() != grid.n)
                throw DataError(p + ": image is " + std::to_string(img.n()) + " pixels wide but the field is " +
                                std::to_string(grid.n));
            const std::string stem = fs::path(p).stem().string();
            save_image(apply_diffeo(img, grid, kind), rec.path("deformed_" + stem + ext));
            rec.record("deformed_" + stem + ext);
            if (kind.is_gaussian()) {
                save_image(gaussian_smooth(img, kind.sigma), rec.path("baseline_" + stem + ext));
                rec.record("baseline_" + stem + ext);
            }
        }
        out << "rendered " << a.images.size() << " image(s) into " << rec.dir().string() << "\n";
        return derived;
    }

    if (a.t_list.empty() || a.c_list.empty()) throw ParameterError("--montage needs --T-list and --c-list");
    const Image img = load_image(a.images.front());
    const int n = img.n();
    std::vector<std::vector<Image>> cells(a.t_list.size());
    std::vector<std::vector<int>> status(a.t_list.size());
    json table = json::array();
    for (std::size_t r = 0; r < a.t_list.size(); ++r) {
        for (std::size_t c = 0; c < a.c_list.size(); ++c) {
            const std::uint64_t cell_index = r * a.c_list.size() + c;
            DiffeoSpec spec{n, a.t_list[r], a.c_list[c], derive_seed(seed, seed_domain::field, cell_index)};
            spec.validate();
            const DiffeoField field = sample_field(spec);
            const ValidityReport v = validity(spec, field);
            Image warped = apply_diffeo(img, evaluate_displacement(field), kind);
            const bool above_upper = v.t_upper && spec.temperature > *v.t_upper;
            const bool green = v.t_lower && v.t_upper && spec.temperature >= *v.t_lower && !above_upper;
            std::ostringstream name;
            name << "montage_T" << r << "_c" << c << ext;
            save_image(warped, rec.path(name.str()));
            rec.record(name.str());
            cells[r].push_back(std::move(warped));
            status[r].push_back(above_upper || !v.is_bijective ? 2 : (green ? 1 : 0));
            json row{{"row", r},
                     {"col", c},
                     {"file", name.str()},
                     {"temperature", spec.temperature},
                     {"cutoff", spec.cutoff},
                     {"delta", v.delta},
                     {"xi_max", v.xi_max},
                     {"is_bijective", v.is_bijective},
                     {"above_upper_bound", above_upper},
                     {"green_region", green},
                     {"T_lower", v.t_lower ? json(*v.t_lower) : json(nullptr)},
                     {"T_upper", v.t_upper ? json(*v.t_upper) : json(nullptr)}};
            row["flag"] = above_upper || !v.is_bijective ? "non-bijective" : (green ? "green" : "small");
            table.push_back(row);
        }
    }
    save_png(build_montage(cells, status), rec.path("montage.png"));
    rec.record("montage.png");
    rec.json_file("montage.json", json{{"n", n}, {"interpolation", to_json(kind)}, {"cells", table}});
    out << "montage of " << a.t_list.size() << "x" << a.c_list.size() << " cells written to "
        << rec.dir().string() << "\n";
    return derived;
}

struct PhaseArgs {
    int n = 32;
    std::vector<double> t_list;
    std::vector<int> c_list;
    int samples = 200;
};

json cmd_phase_diagram(const PhaseArgs& a, std::uint64_t seed, Recorder& rec, std::ostream& out) {
    if (a.t_list.empty() || a.c_list.empty()) throw ParameterError("--T-list and --c-list are required");
    if (a.samples < 1) throw ParameterError("--samples must be >= 1");
    for (double T : a.t_list)
        if (!(T >= 0.0)) throw ParameterError("temperatures must be >= 0");

    std::ostringstream csv;
    csv << "T,c,samples,median_xi_max,p_bijective,delta,asymptotic_delta,T_lower,T_upper,predicted_max_xi\n";
    json rows = json::array();
    std::uint64_t cell = 0;
    for (int c : a.c_list) {
        for (double T : a.t_list) {
            const DiffeoSpec base{a.n, T, c, 0};
            base.validate();
            const std::uint64_t cell_seed = derive_seed(seed, seed_domain::field, cell++);
            std::vector<double> xi(static_cast<std::size_t>(a.samples));
            std::vector<int> bij(static_cast<std::size_t>(a.samples));
#pragma omp parallel for schedule(dynamic)
            for (int s = 0; s < a.samples; ++s) {
                DiffeoSpec spec = base;
                spec.seed = derive_seed(cell_seed, seed_domain::field, static_cast<std::uint64_t>(s));
                const double m = xi_field(sample_field(spec)).max();
                xi[static_cast<std::size_t>(s)] = m;
                bij[static_cast<std::size_t>(s)] = m < 1.0 ? 1 : 0;
            }
            const double med = aggregate(xi, Aggregation::Median);
            const double p = static_cast<double>(std::count(bij.begin(), bij.end(), 1)) / a.samples;
            const auto lo = temperature_lower_bound(a.n, c);
            const auto hi = temperature_upper_bound(c);
            const double pred = predicted_max_xi(T, c);
            csv << fmt(T) << ',' << c << ',' << a.samples << ',' << fmt(med) << ',' << fmt(p) << ','
                << fmt(expected_delta(base)) << ',' << fmt(asymptotic_delta(base)) << ',' << fmt_opt(lo) << ','
                << fmt_opt(hi) << ',' << fmt(pred) << '\n';
            rows.push_back({{"T", T},
                            {"c", c},
                            {"samples", a.samples},
                            {"median_xi_max", med},
                            {"p_bijective", p},
                            {"delta", expected_delta(base)},
                            {"asymptotic_delta", asymptotic_delta(base)},
                            {"T_lower", lo ? json(*lo) : json(nullptr)},
                            {"T_upper", hi ? json(*hi) : json(nullptr)},
                            {"predicted_max_xi", pred}});
        }
    }
    rec.text("phase_diagram.csv", csv.str());
    rec.json_file("phase_diagram.json", json{{"n", a.n}, {"rows", rows}});
    out << "phase diagram with " << rows.size() << " cells written to " << rec.dir().string() << "\n";
    return json();
}

struct ImageSourceArgs {
    std::vector<std::string> images;
    std::vector<std::string> batches;
    int white_noise = 0;
    int channels = 1;
    int n = 32;

    std::vector<Image> load(std::uint64_t seed) const {
        if ((images.empty() && batches.empty()) == (white_noise == 0))
            throw ParameterError("give --images/--image-batch or --white-noise, not both");
        if (white_noise < 0) throw ParameterError("--white-noise must be positive");
        if (white_noise > 0) return white_noise_images(static_cast<std::size_t>(white_noise), channels, n, seed);
        std::vector<Image> out;
        for (const auto& p : images) out.push_back(load_image(p));
        for (const auto& p : batches) {
            auto batch = load_image_batch(p);
            out.insert(out.end(), batch.begin(), batch.end());
        }
        return out;
    }
};

struct PredictorArgs {
    std::string kind = "linear";
    int k = 10;
    int width = 256;
    std::uint64_t seed = 1;

    std::unique_ptr<Predictor> build(std::size_t dim, std::uint64_t realization) const {
        const std::uint64_t s = derive_seed(seed, seed_domain::predictor, realization);
        if (k < 1 || width < 1) throw ParameterError("--k and --width must be >= 1");
        if (kind == "identity") return std::make_unique<LinearPredictor>(LinearPredictor::identity(dim));
        if (kind == "linear")
            return std::make_unique<LinearPredictor>(LinearPredictor::random_gaussian(static_cast<std::size_t>(k), dim, s));
        if (kind == "random-features-relu" || kind == "random-features-tanh")
            return std::make_unique<RandomFeaturePredictor>(
                static_cast<std::size_t>(k), dim, static_cast<std::size_t>(width),
                kind == "random-features-relu" ? RandomFeaturePredictor::Activation::ReLU
                                               : RandomFeaturePredictor::Activation::Tanh,
                s);
        throw ParameterError("unknown predictor '" + kind +
                             "' (expected identity, linear, random-features-relu or random-features-tanh)");
    }
};

struct StabilityArgs {
    ImageSourceArgs source;
    PredictorArgs predictor;
    int cutoff = 3;
    std::vector<double> deltas{1.0};
    InterpArgs interp;
    int transforms = 1;
    std::string aggregation = "median";
    int realizations = 1;
};

json cmd_stability(const StabilityArgs& a, std::uint64_t seed, Recorder& rec, std::ostream& out) {
    if (a.realizations < 1) throw ParameterError("--realizations must be >= 1");
    const auto images = a.source.load(derive_seed(seed, seed_domain::images, 0));
    if (images.empty()) throw ParameterError("no probe images");
    const std::size_t dim = images.front().size();

    std::vector<StabilityReport> averaged;
    json per_delta = json::array();
    for (double delta : a.deltas) {
        std::vector<StabilityReport> reports;
        for (int r = 0; r < a.realizations; ++r) {
            ProbeConfig cfg;
            cfg.n = images.front().n();
            cfg.cutoff = a.cutoff;
            cfg.delta = delta;
            cfg.kind = a.interp.kind();
            cfg.n_transforms_per_image = a.transforms;
            cfg.aggregation = parse_aggregation(a.aggregation);
            cfg.seed = derive_seed(seed, seed_domain::probe, static_cast<std::uint64_t>(r));
            const auto f = a.predictor.build(dim, static_cast<std::uint64_t>(r));
            reports.push_back(compute_stability(*f, cfg, images));
        }
        averaged.push_back(log_average(reports));
        json rj = json::array();
        for (const auto& r : reports) rj.push_back(to_json(r));
        per_delta.push_back({{"delta", delta}, {"log_average", to_json(averaged.back())}, {"realizations", rj}});
    }
    if (a.deltas.size() == 1) {
        json report = to_json(averaged.front());
        report["per_realization"] = per_delta.front()["realizations"];
        rec.json_file("stability_report.json", report);
    } else {
        rec.text("stability_sweep.csv", sweep_to_csv(averaged));
        rec.json_file("stability_sweep.json", json{{"sweep", per_delta}});
    }
    for (const auto& r : averaged)
        out << "delta=" << fmt(r.delta) << " D_f=" << fmt(r.d_f) << " G_f=" << fmt(r.g_f) << " R_f=" << fmt(r.r_f)
            << "\n";
    return json();
}

struct ProbeEmitArgs {
    ImageSourceArgs source;
    int cutoff = 3;
    double delta = 1.0;
    InterpArgs interp;
    int transforms = 1;
    std::string aggregation = "median";
};

json cmd_probe_emit(const ProbeEmitArgs& a, std::uint64_t seed, Recorder& rec, std::ostream& out) {
    const auto images = a.source.load(derive_seed(seed, seed_domain::images, 0));
    if (images.empty()) throw ParameterError("no probe images");
    ProbeConfig cfg;
    cfg.n = images.front().n();
    cfg.cutoff = a.cutoff;
    cfg.delta = a.delta;
    cfg.kind = a.interp.kind();
    cfg.n_transforms_per_image = a.transforms;
    cfg.aggregation = parse_aggregation(a.aggregation);
    cfg.seed = seed;
    const json m = probe::emit(cfg, images, rec.dir());
    for (const char* name : {probe::kManifest, probe::kInputReference, probe::kInputDeformed, probe::kInputNoisy})
        rec.record(name);
    out << "probe emitted: " << m["n_images"].get<std::size_t>() << " images, " << m["n_rows"].get<std::size_t>()
        << " deformed rows, noise_norm=" << fmt(m["noise_norm"].get<double>()) << "\n";
    return json{{"temperature", m["temperature"]}, {"noise_norm", m["noise_norm"]}};
}

json cmd_probe_collect(const std::string& dir, const std::string& name, Recorder& rec, std::ostream& out) {
    const StabilityReport r = probe::collect(dir, name);
    rec.json_file("stability_report.json", to_json(r));
    out << "D_f=" << fmt(r.d_f) << " G_f=" << fmt(r.g_f) << " R_f=" << fmt(r.r_f) << "\n";
    return json();
}

json cmd_probe_respond(const std::string& dir, const PredictorArgs& pa, std::ostream& out) {
    const auto a = npy::load(fs::path(dir) / probe::kInputReference);
    if (a.shape.size() != 4) throw DataError(std::string(probe::kInputReference) + ": expected 4-D array");
    const auto f = pa.build(a.size() / a.shape[0], 0);
    probe::run_local_predictor(*f, dir);
    out << "wrote " << f->name() << " outputs into " << dir << "\n";
    return json();
}

struct StripeArgs {
    int d = 30;
    std::vector<std::size_t> P_list{128, 256, 512, 1024, 2048, 4096, 8192};
    int seeds = 8;
    stripe::NetConfig net{};
    std::string activation = "relu";
    stripe::OptimizerConfig opt{};
    std::size_t n_probe = 4000;
    double noise_norm = 1.0;
    std::size_t n_test = 10000;
};

json cmd_stripe(const StripeArgs& a, std::uint64_t seed, Recorder& rec, std::ostream& out) {
    stripe::ExperimentConfig cfg;
    cfg.d = a.d;
    cfg.P_values = a.P_list;
    cfg.seeds = a.seeds;
    cfg.master_seed = seed;
    cfg.net = a.net;
    cfg.net.activation = stripe::parse_activation(a.activation);
    cfg.opt = a.opt;
    cfg.n_probe = a.n_probe;
    cfg.noise_norm = a.noise_norm;
    cfg.n_test = a.n_test;
    const auto result = stripe::run_experiment(cfg);
    rec.text("stripe_runs.csv", stripe::runs_to_csv(result.runs));

    json points = json::array();
    for (const auto& p : result.points)
        points.push_back({{"P", p.P},
                          {"R_f_logmean", p.r_f_logmean},
                          {"alignment_median", p.alignment_median},
                          {"test_error_mean", p.test_error_mean},
                          {"converged", p.converged},
                          {"runs", p.runs}});
    json summary{{"d", a.d}, {"boundaries", cfg.boundaries}, {"seeds", a.seeds}, {"points", points}};
    if (result.fit) {
        summary["slope"] = result.fit->slope;
        summary["slope_ci95"] = {result.fit->ci_low, result.fit->ci_high};
        summary["intercept"] = result.fit->intercept;
        summary["r_squared"] = result.fit->r_squared;
    } else {
        summary["slope"] = nullptr;
        summary["slope_note"] = "a slope needs at least three distinct P values";
    }
    rec.json_file("stripe_summary.json", summary);
    for (const auto& p : result.points)
        out << "P=" << p.P << " R_f=" << fmt(p.r_f_logmean) << " test_error=" << fmt(p.test_error_mean) << "\n";
    if (result.fit) out << "slope=" << fmt(result.fit->slope) << "\n";
    return json();
}

// ------------------------------------------------------------- wiring

void add_interp(CLI::App* c, InterpArgs& a) {
    c->add_option("--interpolation", a.method, "bilinear or gaussian")->check(CLI::IsMember({"bilinear", "gaussian"}));
    c->add_option("--sigma", a.sigma, "Gaussian kernel width in pixels");
}

void add_source(CLI::App* c, ImageSourceArgs& a) {
    c->add_option("--images", a.images, "PNG or single-image NPY files");
    c->add_option("--image-batch", a.batches, "NPY batches of shape (B, C, n, n) or (B, n, n)");
    c->add_option("--white-noise", a.white_noise, "use this many N(0,1) white-noise images instead");
    c->add_option("--channels", a.channels, "channels of white-noise images");
    c->add_option("--n", a.n, "side of white-noise images");
}

void add_predictor(CLI::App* c, PredictorArgs& a) {
    c->add_option("--predictor", a.kind, "identity, linear, random-features-relu, random-features-tanh");
    c->add_option("--k", a.k, "output dimension");
    c->add_option("--width", a.width, "hidden width of random-feature predictors");
    c->add_option("--predictor-seed", a.seed, "seed of the predictor weights");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Maximum-entropy image diffeomorphisms and stability metrics", "diffeo"};
    app.set_version_flag("--version", DIFFEO_VERSION);
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();
    auto config = std::make_shared<JsonConfig>();
    app.config_formatter(config);
    app.set_config("--config", "", "JSON file with option values; command-line flags take precedence");

    std::uint64_t seed = 0;
    std::string out_dir = ".";
    auto common = [&](CLI::App* c) {
        c->add_option("--seed", seed, "master seed (echoed in run_manifest.json)");
        c->add_option("--out-dir", out_dir, "directory for all outputs");
    };

    SampleArgs sample;
    auto* c_sample = app.add_subcommand("sample", "sample fields, grids and validity reports");
    c_sample->add_option("--n", sample.n, "pixels per side");
    c_sample->add_option("--T", sample.temperature, "temperature");
    c_sample->add_option("--delta", sample.delta, "target rms displacement in pixels (sets T)");
    c_sample->add_option("--c", sample.cutoff, "frequency cutoff");
    c_sample->add_option("--count", sample.count, "number of fields");
    common(c_sample);

    RenderArgs render;
    auto* c_render = app.add_subcommand("render", "deform images with a field, or build a (T, c) montage");
    c_render->add_option("--image", render.images, "input PNG or NPY images")->required();
    c_render->add_option("--field", render.field, "field JSON written by sample");
    c_render->add_option("--grid", render.grid, "displacement grid NPY (2, n, n)");
    c_render->add_option("--format", render.format, "png or npy");
    c_render->add_flag("--montage", render.montage, "sample one field per (T, c) cell");
    c_render->add_option("--T-list", render.t_list, "montage temperatures");
    c_render->add_option("--c-list", render.c_list, "montage cutoffs");
    add_interp(c_render, render.interp);
    common(c_render);

    PhaseArgs phase;
    auto* c_phase = app.add_subcommand("phase-diagram", "median max Xi and P(bijective) over a (T, c) grid");
    c_phase->add_option("--n", phase.n, "pixels per side");
    c_phase->add_option("--T-list", phase.t_list, "temperatures")->required();
    c_phase->add_option("--c-list", phase.c_list, "cutoffs")->required();
    c_phase->add_option("--samples", phase.samples, "fields per cell");
    common(c_phase);

    StabilityArgs stab;
    auto* c_stab = app.add_subcommand("stability", "D_f, G_f, R_f of a built-in predictor");
    add_source(c_stab, stab.source);
    add_predictor(c_stab, stab.predictor);
    c_stab->add_option("--c", stab.cutoff, "frequency cutoff");
    c_stab->add_option("--delta", stab.deltas, "one or more deltas (several give a sweep)");
    c_stab->add_option("--transforms", stab.transforms, "diffeomorphisms per image");
    c_stab->add_option("--aggregation", stab.aggregation, "median or mean")->check(CLI::IsMember({"median", "mean"}));
    c_stab->add_option("--realizations", stab.realizations, "independent predictor/probe draws, log-averaged");
    add_interp(c_stab, stab.interp);
    common(c_stab);

    auto* c_probe = app.add_subcommand("probe", "file-exchange protocol for external predictors");
    c_probe->require_subcommand(1);
    ProbeEmitArgs emit;
    auto* c_emit = c_probe->add_subcommand("emit", "write probe inputs and manifest");
    add_source(c_emit, emit.source);
    c_emit->add_option("--c", emit.cutoff, "frequency cutoff");
    c_emit->add_option("--delta", emit.delta, "target delta");
    c_emit->add_option("--transforms", emit.transforms, "diffeomorphisms per image");
    c_emit->add_option("--aggregation", emit.aggregation, "median or mean")->check(CLI::IsMember({"median", "mean"}));
    add_interp(c_emit, emit.interp);
    common(c_emit);
    std::string probe_dir;
    std::string probe_name = "external";
    auto* c_collect = c_probe->add_subcommand("collect", "compute the report from f_*.npy outputs");
    c_collect->add_option("--dir", probe_dir, "directory written by probe emit")->required();
    c_collect->add_option("--predictor-name", probe_name, "name recorded in the report");
    common(c_collect);
    PredictorArgs respond;
    respond.kind = "identity";
    auto* c_respond = c_probe->add_subcommand("respond", "act as the external process with a built-in predictor");
    c_respond->add_option("--dir", probe_dir, "directory written by probe emit")->required();
    add_predictor(c_respond, respond);

    StripeArgs stripe_args;
    auto* c_stripe = app.add_subcommand("stripe", "stripe-model R_f versus training-set size");
    c_stripe->add_option("--d", stripe_args.d, "input dimension");
    c_stripe->add_option("--P-list", stripe_args.P_list, "training-set sizes");
    c_stripe->add_option("--seeds", stripe_args.seeds, "seeds per P");
    c_stripe->add_option("--width", stripe_args.net.width, "hidden width");
    c_stripe->add_option("--activation", stripe_args.activation, "relu or linear");
    c_stripe->add_option("--alpha", stripe_args.net.alpha, "output scale");
    c_stripe->add_option("--w-init", stripe_args.net.w_init, "first-layer init scale");
    c_stripe->add_option("--b-init", stripe_args.net.b_init, "bias init scale");
    c_stripe->add_option("--a-init", stripe_args.net.a_init, "readout init scale");
    c_stripe->add_option("--step", stripe_args.opt.step, "gradient step in units of the width");
    c_stripe->add_option("--max-steps", stripe_args.opt.max_steps, "step cap");
    c_stripe->add_option("--n-probe", stripe_args.n_probe, "probe points for R_f");
    c_stripe->add_option("--noise-norm", stripe_args.noise_norm, "norm of nu and eta");
    c_stripe->add_option("--n-test", stripe_args.n_test, "test points");
    common(c_stripe);

    // Route flat config keys to the invoked command.
    std::vector<std::string> argv_tail(args.begin() + (args.empty() ? 0 : 1), args.end());
    for (auto* sc : app.get_subcommands([](CLI::App*) { return true; })) config->sections.push_back(sc->get_name());
    for (std::size_t i = 0; i < argv_tail.size(); ++i) {
        const auto& t = argv_tail[i];
        if (std::find(config->sections.begin(), config->sections.end(), t) != config->sections.end()) {
            config->default_parents = {t};
            if (t == "probe" && i + 1 < argv_tail.size()) {
                config->default_parents.push_back(argv_tail[i + 1]);
                config->sections.insert(config->sections.end(), {"emit", "collect", "respond"});
            }
            break;
        }
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        std::vector<std::string> reversed(argv_tail.rbegin(), argv_tail.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const CLI::App* invoked = app.get_subcommands().front();
        std::string command = invoked->get_name();
        if (invoked == c_probe) {
            invoked = c_probe->get_subcommands().front();
            command += " " + invoked->get_name();
        }
        if (invoked == c_respond) {
            cmd_probe_respond(probe_dir, respond, out);
            return kExitOk;
        }
        fs::create_directories(out_dir);
        Recorder rec(out_dir);
        json derived;
        if (invoked == c_sample) derived = cmd_sample(sample, seed, rec, out);
        else if (invoked == c_render) derived = cmd_render(render, seed, rec, out);
        else if (invoked == c_phase) derived = cmd_phase_diagram(phase, seed, rec, out);
        else if (invoked == c_stab) derived = cmd_stability(stab, seed, rec, out);
        else if (invoked == c_emit) derived = cmd_probe_emit(emit, seed, rec, out);
        else if (invoked == c_collect) derived = cmd_probe_collect(probe_dir, probe_name, rec, out);
        else if (invoked == c_stripe) derived = cmd_stripe(stripe_args, seed, rec, out);
        write_run_manifest(rec, command, invoked, args, seed, derived, start);
        return kExitOk;
    } catch (const ParameterError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const DegenerateError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDegenerate;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace diffeo::cli
