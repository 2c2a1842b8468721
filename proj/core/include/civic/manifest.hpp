#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace civic::manifest {

std::string sha256_hex(std::string_view data);
/// Throws DataError if the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

struct Artifact {
    std::string path;
    std::string sha256;
};

struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::vector<std::uint64_t> seeds;
    std::vector<Artifact> inputs;
    std::vector<Artifact> outputs;
    std::string started_at;
    std::string finished_at;

    void add_input(const std::filesystem::path& p);
    void add_output(const std::filesystem::path& p);
};

/// UTC, ISO 8601 with seconds.
std::string utc_timestamp();

void write_manifest(std::ostream& out, const RunManifest& m);
RunManifest read_manifest(std::istream& in);

}  // namespace civic::manifest
