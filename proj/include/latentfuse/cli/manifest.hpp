#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace latentfuse::cli {

std::string sha256_hex(std::string_view bytes);
/// Throws IoError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

struct FileDigest {
    std::string path;
    std::string sha256;
    std::uintmax_t bytes = 0;
};

FileDigest digest_file(const std::filesystem::path& path);

/// Provenance record of one command invocation. Timestamps live here and
/// nowhere else, so result files stay byte-identical across reruns.
struct RunManifest {
    std::string command;
    std::string config_hash;
    std::string code_version;
    std::string started_utc;
    std::string finished_utc;
    nlohmann::json config;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;

    nlohmann::json to_json() const;
};

std::string utc_now();
std::string code_version();

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace latentfuse::cli
