#include "scriptorium/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include "scriptorium/errors.hpp"
#include "scriptorium/rng.hpp"

namespace scriptorium {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << contents;
}

std::vector<ManifestEntry> parse_manifest(const std::string& contents) {
    std::vector<ManifestEntry> out;
    std::istringstream in(contents);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 3 || fields[0].empty())
            throw ConfigError("manifest:" + std::to_string(line_no), "expected <path>\\t<author>\\t<work>");
        out.push_back({fields[0], fields[1], fields[2]});
    }
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
    return parse_manifest(read_file(manifest));
}

std::vector<Document> load_corpus(const std::filesystem::path& manifest, NormalizationPolicy policy) {
    const auto entries = read_manifest(manifest);
    const auto base = manifest.parent_path();
    std::vector<std::future<Document>> jobs;
    jobs.reserve(entries.size());
    for (const auto& e : entries) {
        jobs.push_back(std::async(std::launch::async, [&base, e, policy] {
            return Document{e.path, e.author, e.work, normalize(read_file(base / e.path), policy)};
        }));
    }
    std::vector<Document> docs;
    docs.reserve(jobs.size());
    for (auto& j : jobs) docs.push_back(j.get());
    return docs;
}

CorpusSplit split_corpus(std::size_t n_documents, double test_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(n_documents);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Pcg32 rng(seed, 0x5eed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(static_cast<std::uint32_t>(i))]);
    auto n_test = static_cast<std::size_t>(static_cast<double>(n_documents) * test_fraction + 0.5);
    if (n_documents >= 2) n_test = std::clamp<std::size_t>(n_test, 1, n_documents - 1);
    CorpusSplit split;
    split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, n_documents)));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, n_documents)), order.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

namespace {

bool ends_sentence(std::string_view mark) {
    return mark == "." || mark == ";" || mark == "·" || mark == "!" || mark == "?" || mark == "\xcd\xbe" /* U+037E */;
}

}  // namespace

std::vector<NormalizedText> split_paragraphs(const NormalizedText& text, std::size_t target_words) {
    std::vector<NormalizedText> out;
    if (text.word_count() == 0) return out;
    target_words = std::max<std::size_t>(target_words, 1);
    const std::string& s = text.normalized;
    std::vector<std::pair<std::size_t, std::size_t>> cuts;  // end byte, words
    std::size_t words_in_para = 0;
    const std::size_t hard_limit = target_words + target_words / 2;
    for (std::size_t w = 0; w < text.word_count(); ++w) {
        ++words_in_para;
        // Byte range between this word and the next.
        const std::size_t gap_begin = text.word_spans[w].end;
        const std::size_t gap_end = w + 1 < text.word_count() ? text.word_spans[w + 1].start : s.size();
        bool cut = false;
        if (words_in_para >= hard_limit) {
            cut = true;
        } else if (words_in_para >= target_words) {
            for (std::size_t i = gap_begin; i < gap_end; ++i) {
                if (!text.punctuation_mask[i]) continue;
                std::size_t j = i;
                while (j < gap_end && text.punctuation_mask[j] && (j == i || (static_cast<unsigned char>(s[j]) & 0xC0) == 0x80)) ++j;
                if (ends_sentence(std::string_view(s).substr(i, j - i))) cut = true;
            }
        }
        if (cut || w + 1 == text.word_count()) {
            cuts.push_back({w + 1 == text.word_count() ? s.size() : gap_end, words_in_para});
            words_in_para = 0;
        }
    }
    // A short remainder joins the previous paragraph.
    if (cuts.size() >= 2 && cuts.back().second < (target_words + 1) / 2) {
        cuts[cuts.size() - 2].first = cuts.back().first;
        cuts.pop_back();
    }
    std::size_t para_start = 0;
    for (const auto& [end, count] : cuts) {
        out.push_back(normalize(std::string_view(s).substr(para_start, end - para_start), text.policy));
        para_start = end;
    }
    return out;
}

}  // namespace scriptorium
