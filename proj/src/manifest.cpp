#include "sagkit/manifest.hpp"

#include "sagkit/binary_io.hpp"
#include "sagkit/errors.hpp"

#include <openssl/evp.h>

#include <cstdio>

namespace sagkit {

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
        throw Error("SHA-256 computation failed");
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        out += buf;
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(binio::read_file(path)); }

void RunManifest::add_input(const std::filesystem::path& path) {
    inputs.push_back({std::filesystem::absolute(path).lexically_normal().string(), sha256_file(path)});
}

void RunManifest::add_output(const std::filesystem::path& out_dir, const std::filesystem::path& path) {
    const auto rel = std::filesystem::relative(path, out_dir).generic_string();
    outputs.push_back({rel, sha256_file(path)});
}

namespace {

nlohmann::json digests_to_json(const std::vector<FileDigest>& ds) {
    auto arr = nlohmann::json::array();
    for (const auto& d : ds) arr.push_back({{"path", d.path}, {"sha256", d.sha256}});
    return arr;
}

std::vector<FileDigest> digests_from_json(const nlohmann::json& j) {
    std::vector<FileDigest> out;
    for (const auto& d : j) out.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
    return out;
}

}  // namespace

nlohmann::json manifest_to_json(const RunManifest& m) {
    return {{"tool_version", m.tool_version},
            {"command", m.command},
            {"argv", m.argv},
            {"working_directory", m.working_directory},
            {"config", m.config},
            {"seeds", m.seeds},
            {"inputs", digests_to_json(m.inputs)},
            {"outputs", digests_to_json(m.outputs)},
            {"notes", m.notes},
            {"wall_time_seconds", m.wall_time_seconds}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
    try {
        RunManifest m;
        m.tool_version = j.at("tool_version").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.working_directory = j.at("working_directory").get<std::string>();
        m.config = j.at("config");
        m.seeds = j.at("seeds");
        m.inputs = digests_from_json(j.at("inputs"));
        m.outputs = digests_from_json(j.at("outputs"));
        m.notes = j.at("notes").get<std::vector<std::string>>();
        m.wall_time_seconds = j.at("wall_time_seconds").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed manifest: ") + e.what());
    }
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
    binio::write_text(path, manifest_to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& path) {
    try {
        return manifest_from_json(nlohmann::json::parse(binio::read_text(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

}  // namespace sagkit
