#include "scriptorium/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "scriptorium/errors.hpp"

namespace scriptorium {

int longest_mask_run(std::span<const TokenId> tokens) {
    int best = 0;
    int run = 0;
    for (auto t : tokens) {
        run = t == Vocabulary::kMask ? run + 1 : 0;
        best = std::max(best, run);
    }
    return best;
}

int route_mask_model(int run, std::span<const int> available) {
    int chosen = 1;
    for (int m : available)
        if (m <= run && m > chosen) chosen = m;
    return chosen;
}

AttentionTensor ScorerBackend::attention(std::span<const TokenId>) const {
    throw CapabilityError("backend " + model_id() + " does not export attention");
}

MaskResponse score_masks(const ScorerBackend& backend, std::span<const TokenId> context,
                         std::span<const std::size_t> mask_positions, std::size_t top_k) {
    if (context.size() > backend.context_limit())
        throw TruncationError("context of " + std::to_string(context.size()) + " tokens exceeds limit " +
                              std::to_string(backend.context_limit()));
    MaskQuery q;
    q.tokens.assign(context.begin(), context.end());
    q.top_k = top_k;
    for (auto p : mask_positions) {
        if (p >= q.tokens.size()) throw std::out_of_range("mask position outside context");
        q.tokens[p] = Vocabulary::kMask;
    }
    return backend.score(q);
}

ContextWindow choose_window(const Tokenization& text, std::size_t first, std::size_t last, std::size_t limit) {
    const std::size_t n = text.size();
    if (n <= limit) return {0, n};
    if (last - first > limit) throw TruncationError("masked span longer than the context limit");
    const std::size_t center = (first + last) / 2;
    std::size_t begin = center > limit / 2 ? center - limit / 2 : 0;
    begin = std::min({begin, n - limit, first});
    if (last > limit) begin = std::max(begin, last - limit);
    std::size_t end = begin + limit;

    const std::size_t slack = limit / 4;
    for (std::size_t b = begin; b <= first && b - begin <= slack; ++b) {
        if (b == 0 || text.punctuation[b - 1]) {
            begin = b;
            break;
        }
    }
    for (std::size_t e = end; e >= last && end - e <= slack; --e) {
        if (e == n || text.punctuation[e - 1]) {
            end = e;
            break;
        }
        if (e == 0) break;
    }
    return {begin, end};
}

std::vector<TokenId> replace_with_masks(std::span<const TokenId> tokens, std::size_t first, std::size_t last,
                                        std::size_t count) {
    if (first > last || last > tokens.size()) throw std::out_of_range("mask range outside context");
    std::vector<TokenId> out(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(first));
    out.insert(out.end(), count, Vocabulary::kMask);
    out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(last), tokens.end());
    return out;
}

namespace {

struct Partial {
    std::vector<TokenId> tokens;  // context with committed fills
    std::vector<TokenId> fills;   // per mask slot; kMask while unfilled
    std::vector<double> steps;
    double logprob = 0.0;
};

double entropy(const MaskScores& s) {
    double h = 0.0;
    for (const auto& t : s.top) h -= std::exp(t.logprob) * t.logprob;
    if (std::isfinite(s.tail_logmass)) h -= std::exp(s.tail_logmass) * s.tail_logmass;
    return h;
}

bool better(const Partial& a, const Partial& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.fills < b.fills;
}

}  // namespace

std::vector<SpanHypothesis> beam_search(const ScorerBackend& backend, std::span<const TokenId> context,
                                        const BeamOptions& options) {
    if (options.beam_width == 0) throw std::invalid_argument("beam width must be >= 1");
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < context.size(); ++i)
        if (context[i] == Vocabulary::kMask) slots.push_back(i);
    if (slots.empty()) throw std::invalid_argument("beam search needs at least one mask");
    if (context.size() > backend.context_limit()) throw TruncationError("context exceeds the backend limit");

    const std::size_t k = std::min(options.beam_width, backend.predictable_size());
    std::vector<Partial> beams(1);
    beams[0].tokens.assign(context.begin(), context.end());
    beams[0].fills.assign(slots.size(), Vocabulary::kMask);

    for (std::size_t step = 0; step < slots.size(); ++step) {
        std::vector<Partial> next;
        for (const auto& beam : beams) {
            MaskQuery q{beam.tokens, k, {}};
            const MaskResponse r = backend.score(q);
            // per_mask follows the remaining masks in position order.
            std::vector<std::size_t> open;
            for (std::size_t s = 0; s < slots.size(); ++s)
                if (beam.fills[s] == Vocabulary::kMask) open.push_back(s);
            if (r.per_mask.size() != open.size()) throw TransportError("backend returned the wrong number of masks");
            std::size_t pick = 0;
            if (options.order == FillOrder::lowest_entropy_first) {
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < open.size(); ++j) {
                    const double h = entropy(r.per_mask[j]);
                    if (h < best) {
                        best = h;
                        pick = j;
                    }
                }
            }
            const std::size_t slot = open[pick];
            for (const auto& cand : r.per_mask[pick].top) {
                Partial p = beam;
                p.tokens[slots[slot]] = cand.token;
                p.fills[slot] = cand.token;
                p.steps.push_back(cand.logprob);
                p.logprob += cand.logprob;
                next.push_back(std::move(p));
            }
        }
        std::sort(next.begin(), next.end(), better);
        // Different fill orders can reach the same fills; keep the best.
        std::set<std::vector<TokenId>> seen;
        beams.clear();
        for (auto& p : next) {
            if (beams.size() == options.beam_width) break;
            if (seen.insert(p.fills).second) beams.push_back(std::move(p));
        }
    }

    std::vector<SpanHypothesis> out;
    out.reserve(beams.size());
    for (auto& b : beams) {
        SpanHypothesis h;
        h.tokens = std::move(b.fills);
        h.step_logprobs = std::move(b.steps);
        h.logprob = b.logprob;
        h.detokenized = backend.tokenizer().join(h.tokens);
        out.push_back(std::move(h));
    }
    return out;
}

double sequence_logprob(const ScorerBackend& backend, std::span<const TokenId> context, std::span<const TokenId> fill) {
    std::vector<TokenId> tokens(context.begin(), context.end());
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == Vocabulary::kMask) slots.push_back(i);
    if (slots.size() != fill.size()) throw std::invalid_argument("fill length differs from the number of masks");
    double total = 0.0;
    for (std::size_t j = 0; j < slots.size(); ++j) {
        const MaskResponse r = backend.score(MaskQuery{tokens, 1, {fill[j]}});
        total += r.per_mask.at(0).candidates.at(0).logprob;
        tokens[slots[j]] = fill[j];
    }
    return total;
}

const WordScore* WordDistribution::find(std::string_view word) const {
    for (const auto& s : scores)
        if (s.word == word) return &s;
    return nullptr;
}

WordDistribution word_distribution(const ScorerBackend& backend, const Tokenization& text, std::size_t word_index,
                                   std::span<const std::string> candidates, std::size_t max_mask_count) {
    if (word_index >= text.word_first_token.size()) throw std::out_of_range("word index outside text");
    const std::size_t first = text.word_first_token[word_index];
    const std::size_t count = text.word_token_count[word_index];
    const Tokenizer& tok = backend.tokenizer();

    WordDistribution out;
    std::vector<std::vector<TokenId>> pieces(candidates.size());
    std::vector<double> logprob(candidates.size(), 0.0);
    std::map<std::size_t, std::vector<std::size_t>> by_length;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        pieces[c] = tok.encode_word(candidates[c]);
        if (pieces[c].size() > max_mask_count) {
            out.skipped.push_back(candidates[c]);
            continue;
        }
        by_length[pieces[c].size()].push_back(c);
    }

    for (const auto& [m, members] : by_length) {
        const std::size_t limit = backend.context_limit();
        ContextWindow w{0, text.size()};
        if (text.size() - count + m > limit) w = choose_window(text, first, first + count, limit - (m > count ? m - count : 0));
        const std::span<const TokenId> all(text.tokens);
        const auto base = replace_with_masks(all.subspan(w.begin, w.end - w.begin), first - w.begin, first - w.begin + count, m);
        const std::size_t slot0 = first - w.begin;

        // Candidates sharing a committed prefix share one query per step.
        std::map<std::vector<TokenId>, std::vector<std::size_t>> groups{{{}, members}};
        for (std::size_t j = 0; j < m; ++j) {
            std::map<std::vector<TokenId>, std::vector<std::size_t>> next;
            for (const auto& [prefix, group] : groups) {
                MaskQuery q{base, 1, {}};
                for (std::size_t p = 0; p < prefix.size(); ++p) q.tokens[slot0 + p] = prefix[p];
                for (auto c : group)
                    if (std::find(q.candidates.begin(), q.candidates.end(), pieces[c][j]) == q.candidates.end())
                        q.candidates.push_back(pieces[c][j]);
                const MaskResponse r = backend.score(q);
                const auto& scored = r.per_mask.at(0).candidates;
                for (auto c : group) {
                    const auto it = std::find(q.candidates.begin(), q.candidates.end(), pieces[c][j]);
                    logprob[c] += scored.at(static_cast<std::size_t>(it - q.candidates.begin())).logprob;
                    auto extended = prefix;
                    extended.push_back(pieces[c][j]);
                    next[std::move(extended)].push_back(c);
                }
            }
            groups = std::move(next);
        }
    }

    for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (pieces[c].size() > max_mask_count) continue;
        WordScore s{candidates[c], pieces[c].size(), logprob[c], std::exp(logprob[c]), 0.0};
        out.total += s.probability;
        out.scores.push_back(std::move(s));
    }
    for (auto& s : out.scores) s.normalized = out.total > 0.0 ? s.probability / out.total : 0.0;
    return out;
}

ScorerMetrics eval_scorer(const ScorerBackend& backend, std::span<const Tokenization> test_corpus) {
    ScorerMetrics m;
    std::size_t hit1 = 0;
    std::size_t hit5 = 0;
    double nll = 0.0;
    const auto& vocab = backend.tokenizer().vocab();
    for (const auto& text : test_corpus) {
        for (std::size_t i = 0; i < text.size(); ++i) {
            const TokenId truth = text.tokens[i];
            if (vocab.is_special(truth)) continue;
            const ContextWindow w = choose_window(text, i, i + 1, backend.context_limit());
            MaskQuery q{{text.tokens.begin() + static_cast<std::ptrdiff_t>(w.begin), text.tokens.begin() + static_cast<std::ptrdiff_t>(w.end)},
                        5,
                        {truth}};
            q.tokens[i - w.begin] = Vocabulary::kMask;
            const MaskResponse r = backend.score(q);
            const auto& s = r.per_mask.at(0);
            if (!s.top.empty() && s.top[0].token == truth) ++hit1;
            if (std::any_of(s.top.begin(), s.top.end(), [&](const ScoredToken& t) { return t.token == truth; })) ++hit5;
            nll -= s.candidates.at(0).logprob;
            ++m.positions;
        }
    }
    if (m.positions > 0) {
        const auto n = static_cast<double>(m.positions);
        m.top1_accuracy = static_cast<double>(hit1) / n;
        m.top5_accuracy = static_cast<double>(hit5) / n;
        m.pseudo_perplexity = std::exp(nll / n);
    }
    return m;
}

}  // namespace scriptorium
