#include "manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "csir/common.hpp"
#include "json.hpp"

namespace csir::cli {

std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read input file: " + path);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    return fnv1a64_hex(bytes.str());
}

std::string config_digest(const std::map<std::string, std::string>& config) {
    std::string canonical;
    for (const auto& [key, value] : config) {
        canonical += key;
        canonical += '=';
        canonical += value;
        canonical += '\n';
    }
    return fnv1a64_hex(canonical);
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest_file(const std::string& path, const RunManifest& manifest) {
    nlohmann::json j;
    j["command"] = manifest.command;
    j["config"] = manifest.config;
    j["config_digest"] = config_digest(manifest.config);
    j["seed"] = manifest.seed;
    j["inputs"] = manifest.inputs;
    j["outputs"] = manifest.outputs;
    j["timestamp"] = utc_timestamp();
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace csir::cli
