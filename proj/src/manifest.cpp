#include "petrel/manifest.hpp"

#include <fstream>
#include <stdexcept>

namespace petrel::manifest {

void write(const RunManifest& m, const std::string& path) {
    nlohmann::json j;
    j["command"] = m.command;
    j["resolved_config"] = m.resolved_config;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    j["seed"] = m.seed;
    j["tool_version"] = m.tool_version;
    j["duration_seconds"] = m.duration_seconds;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("manifest: cannot write " + path);
    f << j.dump(2) << "\n";
    f.close();
    if (!f) throw std::runtime_error("manifest: write failed for " + path);
}

} // namespace petrel::manifest
