#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sagkit {

inline constexpr const char* kToolVersion = "0.1.0";

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

struct FileDigest {
    std::string path;  // inputs: absolute; outputs: relative to the output directory
    std::string sha256;

    bool operator==(const FileDigest&) const = default;
};

struct RunManifest {
    std::string tool_version = kToolVersion;
    std::string command;
    std::vector<std::string> argv;
    std::string working_directory;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json seeds = nlohmann::json::object();
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    std::vector<std::string> notes;  // e.g. "no MSE found within max_subset_size"
    double wall_time_seconds = 0.0;

    void add_input(const std::filesystem::path& path);
    /// Records a file written under `out_dir`.
    void add_output(const std::filesystem::path& out_dir, const std::filesystem::path& path);
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "manifest.json";

}  // namespace sagkit
