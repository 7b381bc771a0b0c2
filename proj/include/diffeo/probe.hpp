#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffeo/serialize.hpp"
#include "diffeo/stability.hpp"

namespace diffeo::probe {

// File names of the exchange protocol, all inside one directory.
inline constexpr const char* kManifest = "probe_manifest.json";
inline constexpr const char* kInputReference = "x.npy";
inline constexpr const char* kInputDeformed = "tau_x.npy";
inline constexpr const char* kInputNoisy = "x_noise.npy";
inline constexpr const char* kOutputReference = "f_x.npy";
inline constexpr const char* kOutputDeformed = "f_tau_x.npy";
inline constexpr const char* kOutputNoisy = "f_noise.npy";

inline constexpr int kProtocolVersion = 1;

/// Build the probe batch and write the manifest plus the three input tensors:
/// x.npy (N, C, n, n) and tau_x.npy, x_noise.npy (N * transforms, C, n, n).
/// Returns the manifest as written.
json emit(const ProbeConfig& config, std::span<const Image> images, const std::filesystem::path& dir);

/// Manifest hash over everything except the "integrity" entry itself,
/// computed on the key-sorted compact dump.
std::string manifest_digest(const json& manifest);

/// Read and verify the manifest; throws IntegrityError on any mismatch.
ProbeSummary read_manifest(const std::filesystem::path& dir);

/// Load a (batch, ...) output tensor as `rows` vectors; trailing axes are
/// flattened and a 1-D array counts as k = 1.
std::vector<std::vector<double>> load_outputs(const std::filesystem::path& path, std::size_t rows);

/// Write predictor outputs in protocol shape (batch, k).
void write_outputs(const std::filesystem::path& path, std::span<const std::vector<double>> rows);

/// Compute the report from the manifest and the three f_*.npy files alone.
StabilityReport collect(const std::filesystem::path& dir, const std::string& predictor = "external");

/// Evaluate `f` on the emitted inputs and write the three output files,
/// standing in for an external process.
void run_local_predictor(const Predictor& f, const std::filesystem::path& dir);

}  // namespace diffeo::probe
