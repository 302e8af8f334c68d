#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scriptorium/gaps.hpp"
#include "scriptorium/ngram.hpp"
#include "scriptorium/scribal.hpp"
#include "scriptorium/simulate.hpp"

namespace scriptorium {

inline constexpr int kConfigVersion = 1;

// INI run configuration, schema version 1. Every key is optional; unknown
// sections or keys are rejected with ConfigError naming "section.key".
// Relative paths resolve against the directory of the config file.
//
//   [run]        version seed out_dir threads
//   [corpus]     source (manifest|synthetic) manifest test_fraction paragraph_words
//   [scorer]     backend (ngram|remote) url vocab timeout_ms order lambda interpolation context_limit
//   [flags]      k scheme target (test|all) max_suggestions global_beam
//   [costs]      see CostTable::parse
//   [synthetic]  seed base_words variant_fraction successors zipf_exponent sentence_end seed_words
//                train_words paragraphs paragraph_words documents document_words
//   [detection]  instances schemes k confidence_ascending seed h0 h1 metric
//   [gaps]       tasks train_tasks seed beam_width hidden batch learning_rate epochs train_seed tasks_file truth_file
//   [attention]  treebank rules
//   [review]     host port token tasks truth predictions log_dir snapshot_every
struct RunConfig {
    std::filesystem::path base_dir;

    struct Run {
        int version = kConfigVersion;
        std::uint64_t seed = 1;
        std::filesystem::path out_dir = "runs";
        std::size_t threads = 0;
    } run;

    struct Corpus {
        std::string source = "manifest";
        std::filesystem::path manifest;
        double test_fraction = 0.2;
        std::size_t paragraph_words = 230;
    } corpus;

    struct Scorer {
        std::string backend = "ngram";
        std::string url;
        std::filesystem::path vocab;
        std::size_t timeout_ms = 30000;
        NgramOptions ngram;
    } scorer;

    struct Flags {
        double k = 3.0;
        std::string scheme = "paper-default";
        std::string target = "test";
        std::size_t max_suggestions = 10;
        std::size_t global_beam = 10;
    } flags;

    CostTable costs = CostTable::default_table();
    bool costs_given = false;

    SyntheticOptions synthetic;
    std::size_t synthetic_documents = 8;
    std::size_t synthetic_document_words = 3000;

    struct Detection {
        DetectionOptions options;
        std::size_t h0 = 2000;
        std::size_t h1 = 300;
        RankScheme metric = RankScheme::rho;
    } detection;

    struct Gaps {
        std::size_t tasks = 200;
        std::size_t train_tasks = 600;
        std::uint64_t seed = 5;
        GapOptions options;
        TrainOptions train;
        std::filesystem::path tasks_file;
        std::filesystem::path truth_file;
    } gaps;

    struct Attention {
        std::filesystem::path treebank;
        std::filesystem::path rules;
    } attention;

    struct Review {
        std::string host = "127.0.0.1";
        int port = 8610;
        std::string token;
        std::filesystem::path tasks;
        std::filesystem::path truth;
        std::filesystem::path predictions;
        std::filesystem::path log_dir = "review";
        std::size_t snapshot_every = 20;
    } review;
};

// `overrides` are (section.key, value) pairs applied after the file, in order.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                       const std::vector<std::pair<std::string, std::string>>& overrides = {});
RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace scriptorium
