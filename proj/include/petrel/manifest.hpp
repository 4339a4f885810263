// Run manifests: every command writes one next to its outputs, recording
// the resolved configuration (defaults materialized), input and output
// paths, the seed, and timing, so a run can be reproduced exactly from its
// manifest with `--threads 1`.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace petrel::manifest {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
    std::string command;
    nlohmann::json resolved_config;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;
    std::string tool_version = kToolVersion;
    double duration_seconds = 0.0;
};

void write(const RunManifest& m, const std::string& path);

} // namespace petrel::manifest
