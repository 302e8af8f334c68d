#pragma once

#include <exception>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "scriptorium/config.hpp"
#include "scriptorium/review.hpp"
#include "scriptorium/run.hpp"
#include "scriptorium/scorer.hpp"

namespace scriptorium {

// Commands that write artifacts and a manifest. `serve` and `replay` are
// handled separately.
const std::vector<std::string>& artifact_commands();

struct Invocation {
    std::string command;
    std::string config_text;
    std::filesystem::path config_dir;
    std::vector<std::pair<std::string, std::string>> overrides;
    // Run directory; <run.out_dir>/<command>-<run_id> when empty.
    std::filesystem::path out;
};

Invocation invocation_from_file(std::string command, const std::filesystem::path& config,
                                std::vector<std::pair<std::string, std::string>> overrides = {});

struct RunResult {
    std::filesystem::path dir;
    RunManifest manifest;
    std::string summary;  // one JSON line for stdout
};

// Throws ConfigError (exit 3), TransportError / CapabilityError (exit 2) or
// other errors (exit 1).
RunResult run_command(const Invocation& inv);

struct ReplayResult {
    bool identical = false;
    std::vector<std::string> mismatches;  // "path: recorded != replayed"
    RunResult rerun;
};

// Checks the recorded input digests, re-runs into `out` (a fresh directory
// next to the manifest when empty) and compares output digests.
ReplayResult replay_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out = {});

int exit_code_for(const std::exception& e);
std::string error_json(const std::exception& e);

// Backend and texts shared by the commands.
struct Workspace {
    std::shared_ptr<const Tokenizer> tokenizer;
    std::shared_ptr<const ScorerBackend> backend;
    std::vector<NormalizedText> training;
    std::vector<NormalizedText> held_out;  // paragraphs
    std::vector<std::string> held_out_source;
    std::vector<std::string> held_out_title;
    std::vector<SearchDocument> documents;  // whole documents for the review search
    AuthorDictionary dictionary;
    std::vector<std::filesystem::path> inputs;
};

Workspace open_workspace(const RunConfig& config, bool force_synthetic = false);

}  // namespace scriptorium
