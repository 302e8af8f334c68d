#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scriptorium/text.hpp"

namespace scriptorium {

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    std::string author;
    std::string work;
};

struct Document {
    std::string id;  // manifest-relative path
    std::string author;
    std::string work;
    NormalizedText text;
};

// One line per entry: `<relative-path>\t<author-tag>\t<work-tag>`.
// Blank lines and lines starting with '#' are ignored.
std::vector<ManifestEntry> parse_manifest(const std::string& contents);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);

// Reads every manifest document (in parallel) and normalizes it.
std::vector<Document> load_corpus(const std::filesystem::path& manifest, NormalizationPolicy policy);

struct CorpusSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Document-level split with a seeded shuffle; at least one test document
// whenever there are two or more documents.
CorpusSplit split_corpus(std::size_t n_documents, double test_fraction, std::uint64_t seed);

// Splits a text into paragraphs of roughly `target_words`, cutting at the first
// sentence-final punctuation after the target is reached (hard cut at 1.5x).
std::vector<NormalizedText> split_paragraphs(const NormalizedText& text, std::size_t target_words);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace scriptorium
