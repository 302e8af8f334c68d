#include "scriptorium/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "parallel.hpp"
#include "scriptorium/errors.hpp"

namespace scriptorium {

using json = nlohmann::ordered_json;

namespace {

constexpr std::u32string_view kAlphabet = U"αβγδεζηθικλμνξοπρστυφχψω";

std::vector<double> cumulative(const std::vector<double>& w) {
    std::vector<double> c(w.size());
    double t = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) c[i] = t += w[i];
    return c;
}

std::size_t draw_cumulative(Pcg32& rng, const std::vector<double>& c) {
    const double u = rng.uniform() * c.back();
    return std::min<std::size_t>(static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), u) - c.begin()), c.size() - 1);
}

}  // namespace

SyntheticLanguage::SyntheticLanguage(const LanguageOptions& o) : sentence_end_(o.sentence_end) {
    Pcg32 rng(o.seed, 17);
    std::set<std::u32string> seen;
    std::vector<std::u32string> words;
    while (words.size() < o.base_words) {
        std::u32string w(2 + rng.below(6), U' ');
        for (auto& c : w) c = kAlphabet[rng.below(static_cast<std::uint32_t>(kAlphabet.size()))];
        if (seen.insert(w).second) words.push_back(w);
    }
    const std::size_t base = words.size();
    for (std::size_t i = 0; i < base; ++i) {
        if (rng.uniform() >= o.variant_fraction) continue;
        std::u32string v = words[i];
        const std::size_t pos = rng.below(static_cast<std::uint32_t>(v.size()));
        char32_t c = v[pos];
        while (c == v[pos]) c = kAlphabet[rng.below(static_cast<std::uint32_t>(kAlphabet.size()))];
        v[pos] = c;
        if (seen.insert(v).second) words.push_back(v);
    }
    for (std::size_t i = words.size() - 1; i > 0; --i) std::swap(words[i], words[rng.below(static_cast<std::uint32_t>(i + 1))]);
    for (const auto& w : words) words_.push_back(to_utf8(w));

    std::vector<double> zipf(words_.size());
    for (std::size_t r = 0; r < zipf.size(); ++r) zipf[r] = 1.0 / std::pow(static_cast<double>(r + 1), o.zipf_exponent);
    start_ = cumulative(zipf);
    next_.resize(words_.size());
    next_cum_.resize(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
        std::set<std::size_t> chosen;
        while (chosen.size() < std::min(o.successors, words_.size())) chosen.insert(draw_cumulative(rng, start_));
        std::vector<double> weights;
        for (auto j : chosen) {
            next_[i].push_back(j);
            const double u = rng.uniform();
            weights.push_back(u * u * u + 1e-3);
        }
        next_cum_[i] = cumulative(weights);
    }
}

std::size_t SyntheticLanguage::draw(Pcg32& rng, const std::vector<double>& c) const { return draw_cumulative(rng, c); }

std::string SyntheticLanguage::sample_document(Pcg32& rng, std::size_t n_words) const {
    std::string out;
    std::size_t count = 0;
    while (count < n_words) {
        std::size_t cur = draw(rng, start_);
        std::size_t len = 0;
        while (true) {
            if (!out.empty()) out += ' ';
            out += words_[cur];
            ++count;
            ++len;
            if (len >= 3 && rng.uniform() < sentence_end_) break;
            cur = next_[cur][draw(rng, next_cum_[cur])];
        }
        out += '.';
    }
    return out;
}

std::string sample_from_model(const NgramScorer& model, Pcg32& rng, std::size_t n_words) {
    const auto& vocab = model.tokenizer().vocab();
    std::vector<TokenId> history;
    std::string out;
    std::size_t words = 0;
    bool ended = false;
    while (!(ended && words >= n_words)) {
        auto p = model.forward_distribution(history);
        p[0] = 0.0;  // never emit UNK
        TokenId t = static_cast<TokenId>(draw_cumulative(rng, cumulative(p))) + Vocabulary::kFirstPredictable;
        if (words >= 3 * n_words && !ended) {
            const auto dot = vocab.find(".");
            if (dot) t = *dot;
        }
        const bool punct = vocab.is_punctuation(t);
        if (!punct && !out.empty()) out += ' ';
        if (punct && out.empty()) continue;
        out += vocab.piece(t);
        words += punct ? 0 : 1;
        ended = punct && vocab.piece(t) == ".";
        history.push_back(t);
    }
    return out;
}

SyntheticSetup make_synthetic_setup(const SyntheticOptions& o) {
    SyntheticSetup s;
    const SyntheticLanguage lang(o.language);
    constexpr std::size_t kDocWords = 2000;

    auto sample_docs = [&](std::size_t total, std::uint64_t stream, auto&& sampler) {
        const std::size_t n_docs = (total + kDocWords - 1) / kDocWords;
        std::vector<NormalizedText> docs(n_docs);
        detail::parallel_for(n_docs, 0, [&](std::size_t d) {
            Pcg32 rng = Pcg32::fork(o.seed ^ stream, d);
            docs[d] = normalize(sampler(rng, kDocWords), kComparisonPolicy);
        });
        return docs;
    };

    const auto seed_docs = sample_docs(o.seed_words, 0x5eed, [&](Pcg32& rng, std::size_t n) { return lang.sample_document(rng, n); });
    s.tokenizer = std::make_shared<WordTokenizer>(WordTokenizer::build(seed_docs));
    std::vector<Tokenization> seed_tokens;
    for (const auto& d : seed_docs) seed_tokens.push_back(s.tokenizer->tokenize(d));
    s.generator = std::make_shared<NgramScorer>(s.tokenizer, seed_tokens, o.generator);

    s.training = sample_docs(o.train_words, 0x7a1, [&](Pcg32& rng, std::size_t n) { return sample_from_model(*s.generator, rng, n); });
    s.paragraphs.resize(o.paragraphs);
    detail::parallel_for(o.paragraphs, 0, [&](std::size_t i) {
        Pcg32 rng = Pcg32::fork(o.seed ^ 0x9a4a, i);
        s.paragraphs[i] = normalize(sample_from_model(*s.generator, rng, o.paragraph_words), kComparisonPolicy);
    });

    std::vector<Tokenization> train_tokens;
    for (const auto& d : s.training) train_tokens.push_back(s.tokenizer->tokenize(d));
    s.scorer = std::make_shared<NgramScorer>(s.tokenizer, train_tokens, o.scorer);
    s.dictionary = build_dictionary(s.training);
    return s;
}

std::optional<CorruptionRecord> corrupt_paragraph(const NormalizedText& paragraph, const AuthorDictionary& dict, Pcg32& rng,
                                                  std::int64_t min_count, std::size_t budget) {
    if (paragraph.word_count() == 0) return std::nullopt;
    std::set<char32_t> letters;
    for (const auto& [w, c] : dict.counts())
        for (char32_t ch : to_u32(w)) letters.insert(ch);
    letters.erase(U' ');
    if (letters.size() < 2) return std::nullopt;
    const std::vector<char32_t> alphabet(letters.begin(), letters.end());

    for (std::size_t attempt = 1; attempt <= budget; ++attempt) {
        const std::size_t wi = rng.below(static_cast<std::uint32_t>(paragraph.word_count()));
        std::u32string word = to_u32(paragraph.comparison_word(wi));
        if (word.empty()) continue;
        const std::size_t pos = rng.below(static_cast<std::uint32_t>(word.size()));
        const char32_t old = word[pos];
        char32_t c = old;
        while (c == old) c = alphabet[rng.below(static_cast<std::uint32_t>(alphabet.size()))];
        word[pos] = c;
        const std::string candidate = to_utf8(word);
        if (dict.count(candidate) < min_count) continue;
        CorruptionRecord r;
        r.word_index = wi;
        r.original = paragraph.comparison_word(wi);
        r.corrupted = candidate;
        r.char_position = pos;
        r.attempts = attempt;
        return r;
    }
    return std::nullopt;
}

NormalizedText apply_corruption(const NormalizedText& paragraph, const CorruptionRecord& r) {
    const auto& span = paragraph.word_spans.at(r.word_index);
    std::string s = paragraph.normalized;
    s.replace(span.start, span.end - span.start, r.corrupted);
    return normalize(s, paragraph.policy);
}

const char* scheme_name(RankScheme s) {
    switch (s) {
        case RankScheme::rho: return "rho";
        case RankScheme::chance: return "chance";
        case RankScheme::confidence: return "confidence";
    }
    return "?";
}

RankScheme parse_scheme(std::string_view name) {
    for (auto s : {RankScheme::rho, RankScheme::chance, RankScheme::confidence})
        if (name == scheme_name(s)) return s;
    throw ConfigError("scheme", "unknown ranking scheme '" + std::string(name) + "'");
}

std::vector<std::size_t> rank_records(const std::vector<FlagRecord>& records, RankScheme scheme, bool confidence_ascending) {
    switch (scheme) {
        case RankScheme::rho: return rank_by_rho(records);
        case RankScheme::chance: return rank_by_chance(records);
        case RankScheme::confidence: return rank_by_confidence(records, confidence_ascending);
    }
    return {};
}

const SchemeResult& EvalSummary::result(RankScheme s) const {
    for (const auto& r : schemes)
        if (r.scheme == s) return r;
    throw std::out_of_range(std::string("scheme not evaluated: ") + scheme_name(s));
}

EvalSummary evaluate_detection(const ScorerBackend& backend, const std::vector<NormalizedText>& paragraphs,
                               const AuthorDictionary& dict, const DetectionOptions& options) {
    if (paragraphs.empty()) throw std::invalid_argument("no paragraphs to evaluate");
    const NeighborhoodIndex index(dict, 1, CostTable::unit());
    FlagOptions flag_options;
    flag_options.k = options.k;

    struct Instance {
        std::optional<CorruptionRecord> corruption;
        std::size_t size = 0;
        std::vector<std::size_t> ranks;
        std::vector<bool> recovered;
    };
    std::vector<Instance> results(options.instances);
    detail::parallel_for(options.instances, options.threads, [&](std::size_t i) {
        Pcg32 rng = Pcg32::fork(options.seed, i);
        const std::size_t pid = i % paragraphs.size();
        auto& out = results[i];
        out.corruption = corrupt_paragraph(paragraphs[pid], dict, rng);
        if (!out.corruption) return;
        out.corruption->paragraph_id = pid;
        out.corruption->seed = options.seed;
        const NormalizedText corrupted = apply_corruption(paragraphs[pid], *out.corruption);
        const auto records = compute_flags(backend, corrupted, index, flag_options);
        out.size = records.size();
        for (auto scheme : options.schemes) {
            const auto order = rank_records(records, scheme, options.confidence_ascending);
            const std::size_t pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), out.corruption->word_index) - order.begin());
            out.ranks.push_back(pos + 1);
            const auto& rec = records[out.corruption->word_index];
            out.recovered.push_back(!rec.suggestions.empty() && rec.suggestions.front().word == out.corruption->original);
        }
    });

    EvalSummary s;
    for (auto scheme : options.schemes) s.schemes.push_back({scheme, {}, {}, 0, 0, 0, 0});
    std::vector<std::size_t> hits1(options.schemes.size(), 0);
    std::vector<std::size_t> recovered(options.schemes.size(), 0);
    double inverse_sizes = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        if (!r.corruption) {
            ++s.skipped;
            s.diagnostics.push_back("instance " + std::to_string(i) + ": no dictionary-valid corruption within " +
                                    std::to_string(kCorruptionBudget) + " attempts");
            continue;
        }
        ++s.instances;
        s.corruptions.push_back(*r.corruption);
        s.paragraph_sizes.push_back(r.size);
        inverse_sizes += 1.0 / static_cast<double>(r.size);
        for (std::size_t j = 0; j < options.schemes.size(); ++j) {
            auto& sr = s.schemes[j];
            sr.ranks.push_back(r.ranks[j]);
            sr.percentiles.push_back(static_cast<double>(r.ranks[j] - 1) / static_cast<double>(r.size));
            if (r.ranks[j] == 1) {
                ++hits1[j];
                recovered[j] += r.recovered[j] ? 1 : 0;
            }
        }
    }
    if (s.instances > 0) {
        const auto n = static_cast<double>(s.instances);
        for (std::size_t j = 0; j < s.schemes.size(); ++j) {
            auto& sr = s.schemes[j];
            auto frac = [&](std::size_t k) {
                return static_cast<double>(std::count_if(sr.ranks.begin(), sr.ranks.end(), [k](std::size_t r) { return r <= k; })) / n;
            };
            sr.top1 = frac(1);
            sr.top5 = frac(5);
            sr.top10 = frac(10);
            if (!(sr.top1 <= sr.top5 && sr.top5 <= sr.top10)) throw std::logic_error("top-k accuracies are not monotone");
            sr.recovery_rate = hits1[j] ? static_cast<double>(recovered[j]) / static_cast<double>(hits1[j]) : 0.0;
        }
        s.dkw_epsilon = dkw_epsilon(0.01, s.instances);
        s.random_top1 = inverse_sizes / n;
    }
    return s;
}

namespace {

const char* column_title(RankScheme s) {
    switch (s) {
        case RankScheme::rho: return "Chance-confidence ratio";
        case RankScheme::chance: return "Chance alone";
        case RankScheme::confidence: return "Confidence alone";
    }
    return "?";
}

std::string pad_left(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
    return buf;
}

}  // namespace

std::string render_accuracy_table(const EvalSummary& s) {
    std::string header = pad_right("Accuracy", 8);
    std::string rule(8, '-');
    for (const auto& r : s.schemes) {
        const std::string t = column_title(r.scheme);
        header += " | " + t;
        rule += "-+-" + std::string(t.size(), '-');
    }
    std::string out = header + "\n" + rule + "\n";
    const std::pair<const char*, double SchemeResult::*> rows[] = {
        {"Top-1", &SchemeResult::top1}, {"Top-5", &SchemeResult::top5}, {"Top-10", &SchemeResult::top10}};
    for (const auto& [label, field] : rows) {
        std::string line = pad_right(label, 8);
        for (const auto& r : s.schemes) line += " | " + pad_left(percent(r.*field), std::string(column_title(r.scheme)).size());
        out += line + "\n";
    }
    return out;
}

std::string summary_json(const EvalSummary& s) {
    json j;
    j["instances"] = s.instances;
    j["skipped"] = s.skipped;
    j["dkw_epsilon"] = s.dkw_epsilon;
    j["random_top1"] = s.random_top1;
    json schemes = json::array();
    for (const auto& r : s.schemes)
        schemes.push_back({{"scheme", scheme_name(r.scheme)},
                           {"top1", r.top1},
                           {"top5", r.top5},
                           {"top10", r.top10},
                           {"recovery_rate", r.recovery_rate}});
    j["schemes"] = std::move(schemes);
    // Published figures for the full-scale experiment; not expected to match.
    j["published_reference"] = {{"rho", {0.905, 0.959, 0.976}},
                                {"chance", {0.597, 0.882, 0.931}},
                                {"confidence", {0.542, 0.811, 0.835}},
                                {"recovery_rate", 0.981}};
    json corruptions = json::array();
    for (const auto& c : s.corruptions)
        corruptions.push_back({{"paragraph_id", c.paragraph_id},
                               {"word_index", c.word_index},
                               {"original", c.original},
                               {"corrupted", c.corrupted},
                               {"char_position", c.char_position},
                               {"attempts", c.attempts}});
    j["corruptions"] = std::move(corruptions);
    j["diagnostics"] = s.diagnostics;
    return j.dump(2);
}

double dkw_epsilon(double alpha, std::size_t n) {
    if (n == 0 || !(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("dkw_epsilon needs n > 0 and alpha in (0, 1)");
    return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(n)));
}

double PercentileCdf::at(double x) const {
    if (sorted.empty()) return 0.0;
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

PercentileCdf percentile_cdf(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& sizes, double alpha) {
    if (ranks.size() != sizes.size()) throw std::invalid_argument("ranks and paragraph sizes differ in length");
    PercentileCdf c;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        if (ranks[i] < 1 || ranks[i] > sizes[i]) throw std::invalid_argument("rank outside its paragraph");
        c.sorted.push_back(static_cast<double>(ranks[i] - 1) / static_cast<double>(sizes[i]));
    }
    std::sort(c.sorted.begin(), c.sorted.end());
    if (!ranks.empty()) c.epsilon = dkw_epsilon(alpha, ranks.size());
    return c;
}

namespace {

double metric_value(const FlagRecord& r, RankScheme m) {
    switch (m) {
        case RankScheme::rho: return r.rho;
        case RankScheme::chance: return r.chance;
        case RankScheme::confidence: return r.confidence_alternative;
    }
    return 0.0;
}

double neg_log(double t) { return 0.0 - std::log(t) + 0.0; }

}  // namespace

HypothesisSamples hypothesis_histograms(const ScorerBackend& backend, const std::vector<NormalizedText>& paragraphs,
                                        const AuthorDictionary& dict, RankScheme metric, std::size_t n_h0, std::size_t n_h1,
                                        std::uint64_t seed, double k) {
    if (paragraphs.empty()) throw std::invalid_argument("no paragraphs");
    const NeighborhoodIndex index(dict, 1, CostTable::unit());
    const Tokenizer& tok = backend.tokenizer();
    FlagOptions fo;
    fo.k = k;
    HypothesisSamples out;
    out.metric = scheme_name(metric);
    out.h0.assign(n_h0, 0.0);
    out.h1.assign(n_h1, 0.0);
    std::vector<Tokenization> tokenized(paragraphs.size());
    for (std::size_t i = 0; i < paragraphs.size(); ++i) tokenized[i] = tok.tokenize(paragraphs[i]);

    detail::parallel_for(n_h0, 0, [&](std::size_t i) {
        Pcg32 rng = Pcg32::fork(seed, i);
        const std::size_t p = rng.below(static_cast<std::uint32_t>(paragraphs.size()));
        const std::size_t w = rng.below(static_cast<std::uint32_t>(paragraphs[p].word_count()));
        out.h0[i] = neg_log(metric_value(flag_word(backend, paragraphs[p], tokenized[p], w, index, fo), metric));
    });
    detail::parallel_for(n_h1, 0, [&](std::size_t i) {
        Pcg32 rng = Pcg32::fork(seed ^ 0x4831, i);
        for (;;) {
            const std::size_t p = rng.below(static_cast<std::uint32_t>(paragraphs.size()));
            const auto c = corrupt_paragraph(paragraphs[p], dict, rng);
            if (!c) continue;
            if (tok.encode_word(c->original).size() != 1 || tok.encode_word(c->corrupted).size() != 1) continue;
            const auto text = apply_corruption(paragraphs[p], *c);
            const auto tokens = tok.tokenize(text);
            out.h1[i] = neg_log(metric_value(flag_word(backend, text, tokens, c->word_index, index, fo), metric));
            break;
        }
    });
    return out;
}

std::string write_hypothesis_tsv(const HypothesisSamples& s) {
    std::string out = "metric\thypothesis\tneg_log_t\n";
    char buf[64];
    auto emit = [&](const char* h, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out += s.metric + "\t" + h + "\t" + buf + "\n";
    };
    for (double v : s.h0) emit("H0", v);
    for (double v : s.h1) emit("H1", v);
    return out;
}

HypothesisSamples read_hypothesis_tsv(const std::string& tsv) {
    std::istringstream in(tsv);
    std::string line;
    HypothesisSamples s;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != "metric\thypothesis\tneg_log_t") throw IngestionError("unexpected hypothesis TSV header", 0);
            continue;
        }
        if (line.empty()) continue;
        const auto a = line.find('\t');
        const auto b = line.find('\t', a + 1);
        if (a == std::string::npos || b == std::string::npos) throw ConfigError("tsv:" + std::to_string(line_no), "expected 3 columns");
        s.metric = line.substr(0, a);
        const std::string h = line.substr(a + 1, b - a - 1);
        const double v = std::strtod(line.c_str() + b + 1, nullptr);
        if (h == "H0")
            s.h0.push_back(v);
        else if (h == "H1")
            s.h1.push_back(v);
        else
            throw ConfigError("tsv:" + std::to_string(line_no), "hypothesis must be H0 or H1");
    }
    return s;
}

GeneratedGaps generate_gap_tasks(const std::vector<NormalizedText>& documents, Pcg32& rng, std::size_t n_tasks,
                                 std::size_t max_attempts) {
    GeneratedGaps out;
    if (documents.empty()) return out;
    std::size_t attempts = 0;
    while (out.tasks.size() < n_tasks) {
        const std::size_t n = kMinGapChars + rng.below(kMaxGapChars - kMinGapChars + 1);
        bool placed = false;
        while (!placed) {
            if (++attempts > max_attempts) throw std::runtime_error("could not place a gap within the attempt budget");
            const std::size_t d = rng.below(static_cast<std::uint32_t>(documents.size()));
            const auto& doc = documents[d];
            if (doc.word_count() == 0) continue;
            const std::size_t first = rng.below(static_cast<std::uint32_t>(doc.word_count()));
            std::size_t letters = 0;
            std::size_t last = first;
            while (last < doc.word_count() && letters < n) letters += count_letters(doc.word(last++));
            if (letters != n) continue;
            char id[32];
            std::snprintf(id, sizeof id, "gap-%04zu", out.tasks.size());
            out.tasks.push_back(make_gap_task(id, doc, {first, last}));
            const std::size_t a = doc.word_spans[first].start;
            const std::size_t b = doc.word_spans[last - 1].end;
            out.truth.push_back({id, doc.normalized.substr(a, b - a), d});
            placed = true;
        }
    }
    return out;
}

std::string blind_payload(const GapTask& task, std::string_view title) {
    const auto& t = task.text;
    const std::size_t a = t.word_spans.at(task.gap.first).start;
    const std::size_t b = t.word_spans.at(task.gap.last - 1).end;
    json j;
    j["id"] = task.id;
    j["n_chars"] = task.n_chars;
    j["before"] = t.normalized.substr(0, a);
    j["after"] = t.normalized.substr(b);
    if (!title.empty()) j["title"] = title;
    return j.dump();
}

GapTask task_from_blind_payload(std::string_view payload, NormalizationPolicy policy) {
    try {
        const json j = json::parse(payload);
        const auto n = j.at("n_chars").get<std::size_t>();
        if (n < kMinGapChars || n > kMaxGapChars) throw ConfigError("n_chars", "gap size outside [3, 10]");
        const std::string before = j.at("before").get<std::string>();
        std::string placeholder;
        for (std::size_t i = 0; i < n; ++i) placeholder += "α";
        NormalizedText text = normalize(before + placeholder + j.at("after").get<std::string>(), policy);
        std::size_t w = 0;
        while (w < text.word_count() && text.word_spans[w].start < before.size()) ++w;
        if (w == text.word_count() || text.word_spans[w].start != before.size())
            throw IngestionError("blind payload context does not delimit a word", before.size());
        return make_gap_task(j.at("id").get<std::string>(), std::move(text), {w, w + 1});
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad blind payload: ") + e.what(), 0);
    }
}

std::string truth_line(const GapTruth& truth, std::string_view source) {
    json j;
    j["id"] = truth.id;
    j["words"] = truth.words;
    j["document"] = truth.document;
    if (!source.empty()) j["source"] = source;
    return j.dump();
}

GapTruth parse_truth_line(std::string_view line) {
    try {
        const json j = json::parse(line);
        return {j.at("id").get<std::string>(), j.at("words").get<std::string>(), j.at("document").get<std::size_t>()};
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad truth line: ") + e.what(), 0);
    }
}

std::string canonical_fill(std::string_view text, NormalizationPolicy policy) {
    const NormalizedText n = normalize(text, policy);
    const std::string c = n.comparison_text();
    const NormalizedText m = normalize(c, policy);
    std::string out;
    for (std::size_t i = 0; i < m.normalized.size(); ++i) {
        if (m.normalized[i] == ' ' && i + 1 < m.normalized.size() && m.punctuation_mask[i + 1]) continue;
        out.push_back(m.normalized[i]);
    }
    return out;
}

std::vector<TrainingExample> gap_training_examples(const ScorerBackend& backend, const std::vector<GapTask>& tasks,
                                                   const GapOptions& options, std::size_t threads) {
    std::vector<std::optional<TrainingExample>> slots(tasks.size());
    detail::parallel_for(tasks.size(), threads, [&](std::size_t i) {
        const std::size_t count = gap_token_count(backend.tokenizer().tokenize(tasks[i].text), tasks[i].gap);
        if (count < 1 || count > kMaxGapTokens) return;
        slots[i] = TrainingExample{analyze_gap(backend, tasks[i], options).features, count};
    });
    std::vector<TrainingExample> out;
    for (auto& s : slots)
        if (s) out.push_back(*s);
    return out;
}

GapEvaluation evaluate_gaps(const ScorerBackend& backend, const TokCountNet& net, const std::vector<GapTask>& tasks,
                            const GapOptions& options, std::size_t threads) {
    GapEvaluation e;
    e.predictions.resize(tasks.size());
    e.truths.resize(tasks.size());
    detail::parallel_for(tasks.size(), threads, [&](std::size_t i) {
        const auto& tok = backend.tokenizer();
        e.truths[i] = gap_truth(tok, tok.tokenize(tasks[i].text), tasks[i].gap);
        e.predictions[i] = predict_gap(analyze_gap(backend, tasks[i], options), net, tasks[i]);
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const std::size_t r = hit_rank(e.predictions[i], e.truths[i]);
        e.ranks.push_back(r);
        e.top1 += r == 1;
        e.top2 += r >= 1 && r <= 2;
        e.top10 += r >= 1 && r <= 10;
        for (const auto& s : e.predictions[i].spans) e.length_mismatches += count_letters(s.text) != tasks[i].n_chars;
    }
    return e;
}

}  // namespace scriptorium
