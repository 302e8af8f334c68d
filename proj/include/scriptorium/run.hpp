#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace scriptorium {

std::string sha256_hex(std::string_view data);
// Throws IngestionError when the file cannot be read.
std::string file_sha256(const std::filesystem::path& path);

struct FileDigest {
    std::string path;  // inputs: absolute; outputs: relative to the run directory
    std::string sha256;

    bool operator==(const FileDigest&) const = default;
};

// Everything needed to re-run a command: the config text as it was read, the
// overrides given on the command line and the digests of every input.
struct RunManifest {
    std::string run_id;  // first 16 hex digits of the digest over command, config, overrides and inputs
    std::string command;
    std::string config_text;
    std::string config_dir;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::map<std::string, std::uint64_t> seeds;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    std::string model_id;
    std::string started;  // ISO-8601 UTC; not part of any digest
    std::string finished;

    // Digest over command, config_text, overrides and input digests.
    std::string compute_run_id() const;
};

std::string manifest_json(const RunManifest& m);
RunManifest parse_manifest_json(std::string_view text);  // throws IngestionError

std::string utc_timestamp();

}  // namespace scriptorium
