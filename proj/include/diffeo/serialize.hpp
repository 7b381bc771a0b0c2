#pragma once

#include <filesystem>

#include <json.hpp>

#include "diffeo/diffeo_core.hpp"
#include "diffeo/stability.hpp"

namespace diffeo {

using json = nlohmann::ordered_json;

json to_json(const DiffeoSpec& spec);
DiffeoSpec spec_from_json(const json& j);

json to_json(const ValidityReport& report);
json to_json(const InterpolationKind& kind);
InterpolationKind interpolation_from_json(const json& j);
json to_json(const ProbeConfig& config);
ProbeConfig probe_config_from_json(const json& j);
json to_json(const StabilityReport& report);

/// `<stem>.json` (spec, cutoff shape) plus `<stem>_C.npy` and `<stem>_D.npy`,
/// each (c, c) float64 with entry [i-1, j-1] holding mode (i, j).
void save_field(const DiffeoField& field, const std::filesystem::path& dir, const std::string& stem);
DiffeoField load_field(const std::filesystem::path& json_path);

/// (2, n, n): channel 0 is tau_u, channel 1 is tau_v; rows index v.
void save_grid(const DisplacementGrid& grid, const std::filesystem::path& path);
DisplacementGrid load_grid(const std::filesystem::path& path);

/// Pretty JSON with a trailing newline, written atomically.
void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace diffeo
