#include "scriptorium/flags.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "scriptorium/errors.hpp"

namespace scriptorium {

using json = nlohmann::ordered_json;

namespace {

bool is_word(const Vocabulary& v, std::span<const TokenId> tokens) {
    if (tokens.empty()) return false;
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        const TokenId t = tokens[j];
        if (v.is_special(t) || t == Vocabulary::kUnk || v.is_punctuation(t)) return false;
        if (v.is_continuation(t) != (j > 0)) return false;
    }
    return true;
}

}  // namespace

FlagRecord flag_word(const ScorerBackend& backend, const NormalizedText& text, const Tokenization& tokens,
                     std::size_t word_index, const NeighborhoodIndex& index, const FlagOptions& options) {
    const Tokenizer& tok = backend.tokenizer();
    FlagRecord r;
    r.word_index = word_index;
    r.word = text.comparison_word(word_index);
    const Neighborhood hood = index.query(r.word, options.k);
    std::vector<std::string> candidates = hood.words();

    // Global top suggestion: best whole-word fill with the word's own token count.
    const std::size_t first = tokens.word_first_token.at(word_index);
    const std::size_t count = tokens.word_token_count.at(word_index);
    const ContextWindow w = choose_window(tokens, first, first + count, backend.context_limit());
    const auto ctx = replace_with_masks(std::span(tokens.tokens).subspan(w.begin, w.end - w.begin), first - w.begin,
                                        first - w.begin + count, count);
    double beam_best = 0.0;
    for (const auto& h : beam_search(backend, ctx, {options.global_beam, FillOrder::left_to_right})) {
        if (!is_word(tok.vocab(), h.tokens)) continue;
        beam_best = std::exp(h.logprob);
        r.top_global = h.detokenized;
        break;
    }
    if (!r.top_global.empty()) {
        r.scribal_dist_global = scribal_distance(r.word, r.top_global, index.costs());
        if (r.scribal_dist_global <= options.k && !hood.contains(r.top_global)) candidates.push_back(r.top_global);
    }

    const WordDistribution dist = word_distribution(backend, tokens, word_index, candidates, options.max_mask_count);
    for (const auto& s : dist.scores)
        r.suggestions.push_back({s.word, s.probability, scribal_distance(r.word, s.word, index.costs())});
    std::stable_sort(r.suggestions.begin(), r.suggestions.end(), [](const Suggestion& a, const Suggestion& b) {
        return a.chance != b.chance ? a.chance > b.chance : a.word < b.word;
    });
    const WordScore* self = dist.find(r.word);
    r.chance = self ? self->probability : 0.0;
    r.confidence_restricted = r.suggestions.empty() ? 0.0 : r.suggestions.front().chance;
    r.scribal_dist = r.suggestions.empty() ? 0.0 : r.suggestions.front().distance;
    for (const auto& x : r.suggestions)
        if (x.word != r.word) {
            r.confidence_alternative = x.chance;
            break;
        }
    if (r.confidence_restricted > beam_best || r.top_global.empty()) {
        beam_best = r.confidence_restricted;
        if (!r.suggestions.empty()) {
            r.top_global = r.suggestions.front().word;
            r.scribal_dist_global = r.suggestions.front().distance;
        }
    }
    r.confidence_global = beam_best;

    r.degenerate = candidates.size() <= 1 || !self || r.confidence_restricted <= 0.0;
    r.rho = r.degenerate ? 1.0 : r.chance / r.confidence_restricted;
    if (r.suggestions.size() > options.max_suggestions) r.suggestions.resize(options.max_suggestions);
    return r;
}

std::vector<FlagRecord> compute_flags(const ScorerBackend& backend, const NormalizedText& text,
                                      const NeighborhoodIndex& index, const FlagOptions& options) {
    if (text.policy != backend.tokenizer().policy())
        throw std::invalid_argument("text was normalized with a policy other than the tokenizer's");
    const Tokenization tokens = backend.tokenizer().tokenize(text);
    std::vector<FlagRecord> out;
    out.reserve(text.word_count());
    for (std::size_t i = 0; i < text.word_count(); ++i) out.push_back(flag_word(backend, text, tokens, i, index, options));
    return out;
}

namespace {

template <typename Less>
std::vector<std::size_t> ranked(const std::vector<FlagRecord>& records, Less less) {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return less(records[a], records[b]); });
    return order;
}

}  // namespace

std::vector<std::size_t> rank_by_rho(const std::vector<FlagRecord>& records) {
    return ranked(records, [](const FlagRecord& a, const FlagRecord& b) {
        if (a.rho != b.rho) return a.rho < b.rho;
        if (a.chance != b.chance) return a.chance < b.chance;
        return a.word_index < b.word_index;
    });
}

std::vector<std::size_t> rank_by_chance(const std::vector<FlagRecord>& records) {
    return ranked(records, [](const FlagRecord& a, const FlagRecord& b) {
        return a.chance != b.chance ? a.chance < b.chance : a.word_index < b.word_index;
    });
}

std::vector<std::size_t> rank_by_confidence(const std::vector<FlagRecord>& records, bool ascending) {
    return ranked(records, [ascending](const FlagRecord& a, const FlagRecord& b) {
        if (a.confidence_alternative != b.confidence_alternative)
            return ascending ? a.confidence_alternative < b.confidence_alternative : a.confidence_alternative > b.confidence_alternative;
        return a.word_index < b.word_index;
    });
}

ThresholdScheme ThresholdScheme::paper_default() { return {"paper-default", 3.0, 0.5, std::nullopt}; }
ThresholdScheme ThresholdScheme::high_precision() { return {"high-precision", 2.0, 0.9, 1e-6}; }
ThresholdScheme ThresholdScheme::high_recall() { return {"high-recall", 4.0, 0.5, 1e-4}; }

ThresholdScheme ThresholdScheme::named(std::string_view name) {
    for (auto s : {paper_default(), high_precision(), high_recall()})
        if (s.name == name) return s;
    throw ConfigError("flags.scheme", "unknown threshold scheme '" + std::string(name) + "'");
}

std::vector<FlagRecord> apply_thresholds(const std::vector<FlagRecord>& records, const ThresholdScheme& scheme) {
    std::vector<FlagRecord> kept;
    for (const auto& r : records) {
        if (r.confidence_global < scheme.min_confidence) continue;
        if (r.scribal_dist_global > scheme.max_distance) continue;
        if (scheme.max_chance && r.chance > *scheme.max_chance) continue;
        kept.push_back(r);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const FlagRecord& a, const FlagRecord& b) {
        return a.chance != b.chance ? a.chance < b.chance : a.word_index < b.word_index;
    });
    return kept;
}

std::string flag_report_line(const FlagRecord& r, std::string_view document, std::size_t context_begin,
                             std::size_t context_end) {
    json j;
    j["document"] = document;
    j["context"] = {{"begin", context_begin}, {"end", context_end}};
    j["word_index"] = r.word_index;
    j["word"] = r.word;
    j["chance"] = r.chance;
    j["confidence_restricted"] = r.confidence_restricted;
    j["confidence_global"] = r.confidence_global;
    j["confidence_alternative"] = r.confidence_alternative;
    j["scribal_dist"] = r.scribal_dist;
    j["scribal_dist_global"] = r.scribal_dist_global;
    j["rho"] = r.rho;
    j["degenerate"] = r.degenerate;
    j["top_global"] = r.top_global;
    json s = json::array();
    for (const auto& x : r.suggestions) s.push_back({{"word", x.word}, {"chance", x.chance}, {"distance", x.distance}});
    j["suggestions"] = std::move(s);
    return j.dump();
}

FlagReportEntry parse_flag_report_line(std::string_view line) {
    try {
        const json j = json::parse(line);
        FlagReportEntry e;
        e.document = j.at("document").get<std::string>();
        e.context_begin = j.at("context").at("begin").get<std::size_t>();
        e.context_end = j.at("context").at("end").get<std::size_t>();
        auto& r = e.record;
        r.word_index = j.at("word_index").get<std::size_t>();
        r.word = j.at("word").get<std::string>();
        r.chance = j.at("chance").get<double>();
        r.confidence_restricted = j.at("confidence_restricted").get<double>();
        r.confidence_global = j.at("confidence_global").get<double>();
        r.confidence_alternative = j.at("confidence_alternative").get<double>();
        r.scribal_dist = j.at("scribal_dist").get<double>();
        r.scribal_dist_global = j.at("scribal_dist_global").get<double>();
        r.rho = j.at("rho").get<double>();
        r.degenerate = j.at("degenerate").get<bool>();
        r.top_global = j.at("top_global").get<std::string>();
        for (const auto& s : j.at("suggestions"))
            r.suggestions.push_back({s.at("word").get<std::string>(), s.at("chance").get<double>(), s.at("distance").get<double>()});
        return e;
    } catch (const json::exception& ex) {
        throw IngestionError(std::string("bad flag report line: ") + ex.what(), 0);
    }
}

std::vector<std::size_t> ToyJoint::decode(std::size_t sentence) const {
    std::vector<std::size_t> ids(length);
    for (std::size_t i = length; i-- > 0;) {
        ids[i] = sentence % words.size();
        sentence /= words.size();
    }
    return ids;
}

std::size_t ToyJoint::encode(std::span<const std::size_t> word_ids) const {
    std::size_t s = 0;
    for (auto w : word_ids) s = s * words.size() + w;
    return s;
}

double ToyJoint::conditional(std::size_t sentence, std::size_t position, std::size_t w) const {
    auto ids = decode(sentence);
    double total = 0.0;
    double mine = 0.0;
    for (std::size_t b = 0; b < words.size(); ++b) {
        ids[position] = b;
        const double v = p[encode(ids)];
        total += v;
        if (b == w) mine = v;
    }
    return total > 0.0 ? mine / total : 0.0;
}

ToyJoint random_joint(Pcg32& rng, std::u32string_view alphabet, std::size_t max_word_len, std::size_t n_words,
                      std::size_t sentence_length) {
    std::vector<std::u32string> all{U""};
    for (std::size_t len = 1; len <= max_word_len; ++len) {
        const std::size_t before = all.size();
        for (std::size_t i = 0; i < before; ++i)
            if (all[i].size() == len - 1)
                for (auto c : alphabet) all.push_back(all[i] + c);
    }
    all.erase(all.begin());
    if (n_words > all.size()) throw std::invalid_argument("not enough distinct words");
    for (std::size_t i = all.size() - 1; i > 0; --i) std::swap(all[i], all[rng.below(static_cast<std::uint32_t>(i + 1))]);
    ToyJoint j;
    for (std::size_t i = 0; i < n_words; ++i) j.words.push_back(to_utf8(all[i]));
    j.length = sentence_length;
    std::size_t n = 1;
    for (std::size_t i = 0; i < sentence_length; ++i) n *= n_words;
    j.p.resize(n);
    double total = 0.0;
    for (auto& v : j.p) {
        v = -std::log1p(-rng.uniform());
        v = v * v * v + 1e-9;
        total += v;
    }
    for (auto& v : j.p) v /= total;
    return j;
}

PropositionCheck verify_proposition(const ToyJoint& joint, std::size_t sentence) {
    const CostTable unit = CostTable::unit();
    const std::size_t nw = joint.words.size();
    std::vector<std::vector<std::size_t>> neighbors(nw);
    for (std::size_t a = 0; a < nw; ++a)
        for (std::size_t b = 0; b < nw; ++b)
            if (a != b && scribal_distance(joint.words[a], joint.words[b], unit) <= 1.0) neighbors[a].push_back(b);

    PropositionCheck c;
    const auto ids = joint.decode(sentence);
    const double inf = std::numeric_limits<double>::infinity();
    c.rho.assign(joint.length, inf);
    for (std::size_t i = 0; i < joint.length; ++i) {
        double best = 0.0;
        for (auto b : neighbors[ids[i]]) best = std::max(best, joint.conditional(sentence, i, b));
        if (!neighbors[ids[i]].empty()) c.rho[i] = joint.conditional(sentence, i, ids[i]) / best;
    }
    c.argmin_index = static_cast<std::size_t>(std::min_element(c.rho.begin(), c.rho.end()) - c.rho.begin());

    // Exhaustive argmax over W_1(s).
    std::vector<std::size_t> members{sentence};
    for (std::size_t i = 0; i < joint.length; ++i)
        for (auto b : neighbors[ids[i]]) {
            auto alt = ids;
            alt[i] = b;
            members.push_back(joint.encode(alt));
        }
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return joint.p[a] > joint.p[b]; });
    c.best_sentence = members.front();
    if (members.size() > 1) {
        const double top = joint.p[members[0]];
        const double second = joint.p[members[1]];
        c.degenerate = top - second <= 1e-12 * top;
    }

    const bool all_above_one = std::all_of(c.rho.begin(), c.rho.end(), [](double r) { return r > 1.0; });
    c.claim_a = (c.best_sentence == sentence) == all_above_one;
    c.claim_b = true;
    c.claim_c = true;
    if (c.best_sentence != sentence) {
        const auto best_ids = joint.decode(c.best_sentence);
        std::size_t differs = 0;
        for (std::size_t i = 0; i < joint.length; ++i)
            if (best_ids[i] != ids[i]) differs = i;
        c.claim_b = differs == c.argmin_index;
        std::size_t top = ids[differs];
        double top_p = joint.conditional(sentence, differs, top);
        for (auto b : neighbors[ids[differs]]) {
            const double v = joint.conditional(sentence, differs, b);
            if (v > top_p) {
                top_p = v;
                top = b;
            }
        }
        c.claim_c = best_ids[differs] == top;
    }
    return c;
}

JointScorer::JointScorer(ToyJoint joint) : joint_(std::move(joint)) {
    Vocabulary v("toy");
    for (const auto& w : joint_.words) word_token_.push_back(v.add(w));
    tokenizer_ = std::make_shared<WordTokenizer>(std::move(v), kComparisonPolicy);
}

MaskResponse JointScorer::score(const MaskQuery& query) const {
    if (query.tokens.size() != joint_.length) throw std::invalid_argument("query length differs from the joint's sentence length");
    const std::size_t vsize = tokenizer_->vocab().size();
    std::vector<std::size_t> masks;
    std::vector<long> fixed(joint_.length, -1);
    for (std::size_t i = 0; i < joint_.length; ++i) {
        if (query.tokens[i] == Vocabulary::kMask) {
            masks.push_back(i);
            continue;
        }
        const auto it = std::find(word_token_.begin(), word_token_.end(), query.tokens[i]);
        if (it == word_token_.end()) throw std::invalid_argument("token outside the joint's words");
        fixed[i] = it - word_token_.begin();
    }
    MaskResponse resp;
    resp.model_id = model_id();
    resp.consecutive_mask_model = route_mask_model(longest_mask_run(query.tokens), mask_models());
    for (auto m : masks) {
        std::vector<double> mass(vsize, 0.0);
        double total = 0.0;
        for (std::size_t s = 0; s < joint_.universe(); ++s) {
            const auto ids = joint_.decode(s);
            bool ok = true;
            for (std::size_t i = 0; i < joint_.length && ok; ++i) ok = fixed[i] < 0 || ids[i] == static_cast<std::size_t>(fixed[i]);
            if (!ok) continue;
            mass[static_cast<std::size_t>(word_token_[ids[m]])] += joint_.p[s];
            total += joint_.p[s];
        }
        std::vector<TokenId> order;
        for (TokenId t = Vocabulary::kFirstPredictable; t < static_cast<TokenId>(vsize); ++t) order.push_back(t);
        std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return mass[a] > mass[b]; });
        auto lp = [&](TokenId t) { return std::log(mass[static_cast<std::size_t>(t)] / total); };
        MaskScores sc;
        const std::size_t k = std::min(query.top_k, order.size());
        for (std::size_t j = 0; j < k; ++j) sc.top.push_back({order[j], lp(order[j])});
        double tail = 0.0;
        for (std::size_t j = k; j < order.size(); ++j) tail += mass[static_cast<std::size_t>(order[j])] / total;
        sc.tail_logmass = tail > 0.0 ? std::log(tail) : -std::numeric_limits<double>::infinity();
        for (auto c : query.candidates) sc.candidates.push_back({c, lp(c)});
        resp.per_mask.push_back(std::move(sc));
    }
    return resp;
}

}  // namespace scriptorium
