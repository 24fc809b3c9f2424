#pragma once

// Run provenance: every CLI invocation that writes results also writes one
// manifest recording the command, a digest of the resolved configuration,
// the seed, digests of every input file, the output paths, and a UTC
// timestamp.  Digests are FNV-1a-64 over raw bytes, so they are stable
// across platforms.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace csir::cli {

struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;  // resolved option -> value
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;  // path -> digest
    std::vector<std::string> outputs;
};

/// FNV-1a 64-bit digest of a byte string, as "fnv1a64:<16 hex digits>".
std::string fnv1a64_hex(const std::string& bytes);

/// Digest of a file's raw bytes; ConfigError when unreadable.
std::string digest_file(const std::string& path);

/// Digest over the canonical "key=value\n" rendering of the resolved
/// configuration (keys sorted by the map).
std::string config_digest(const std::map<std::string, std::string>& config);

/// Current time as ISO-8601 UTC ("2026-08-22T12:34:56Z").
std::string utc_timestamp();

/// Serialize to JSON and write; ConfigError when the file cannot be opened.
void write_manifest_file(const std::string& path, const RunManifest& manifest);

}  // namespace csir::cli
