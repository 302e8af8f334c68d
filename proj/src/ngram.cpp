#include "scriptorium/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace scriptorium {

namespace {

std::uint64_t key1(TokenId a) { return static_cast<std::uint32_t>(a); }
std::uint64_t key2(TokenId nearest, TokenId farther) {
    return (std::uint64_t{static_cast<std::uint32_t>(nearest)} << 32u) | static_cast<std::uint32_t>(farther);
}

using CountMap = std::unordered_map<std::uint64_t, std::unordered_map<std::uint32_t, double>>;

void mix(std::uint64_t& h, std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
}

}  // namespace

NgramScorer::NgramScorer(std::shared_ptr<const Tokenizer> tokenizer, std::span<const Tokenization> corpus, NgramOptions options)
    : tokenizer_(std::move(tokenizer)), options_(options) {
    if (options_.order < 1 || options_.order > 3) throw std::invalid_argument("n-gram order must be 1, 2 or 3");
    if (!(options_.lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    size_ = tokenizer_->vocab().size() - Vocabulary::kFirstPredictable;
    unigram_counts_.assign(size_, 0.0);

    CountMap fwd2, fwd3, bwd2, bwd3;
    fingerprint_ = 0xcbf29ce484222325ULL;
    mix(fingerprint_, static_cast<std::uint64_t>(options_.order));
    mix(fingerprint_, static_cast<std::uint64_t>(std::llround(options_.lambda * 1e9)));
    mix(fingerprint_, size_);
    for (const auto& text : corpus) {
        const auto& t = text.tokens;
        const auto n = static_cast<std::ptrdiff_t>(t.size());
        auto at = [&](std::ptrdiff_t i, TokenId pad) { return i < 0 || i >= n ? pad : t[static_cast<std::size_t>(i)]; };
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const TokenId w = t[static_cast<std::size_t>(i)];
            mix(fingerprint_, static_cast<std::uint32_t>(w));
            if (w < Vocabulary::kFirstPredictable) continue;
            const auto idx = static_cast<std::uint32_t>(index(w));
            unigram_counts_[idx] += 1.0;
            unigram_total_ += 1.0;
            if (options_.order >= 2) {
                fwd2[key1(at(i - 1, Vocabulary::kBos))][idx] += 1.0;
                bwd2[key1(at(i + 1, Vocabulary::kEos))][idx] += 1.0;
            }
            if (options_.order >= 3) {
                fwd3[key2(at(i - 1, Vocabulary::kBos), at(i - 2, Vocabulary::kBos))][idx] += 1.0;
                bwd3[key2(at(i + 1, Vocabulary::kEos), at(i + 2, Vocabulary::kEos))][idx] += 1.0;
            }
        }
    }
    auto compact = [](CountMap& src, std::unordered_map<std::uint64_t, Followers>& dst) {
        dst.reserve(src.size());
        for (auto& [k, m] : src) {
            Followers f;
            f.counts.assign(m.begin(), m.end());
            std::sort(f.counts.begin(), f.counts.end());
            for (const auto& [i, c] : f.counts) f.total += c;
            dst.emplace(k, std::move(f));
        }
        src.clear();
    };
    compact(fwd2, forward_.bigram);
    compact(fwd3, forward_.trigram);
    compact(bwd2, backward_.bigram);
    compact(bwd3, backward_.trigram);

    const double lv = options_.lambda * static_cast<double>(size_);
    unigram_prob_.resize(size_);
    for (std::size_t i = 0; i < size_; ++i) unigram_prob_[i] = (unigram_counts_[i] + options_.lambda) / (unigram_total_ + lv);
}

std::string NgramScorer::model_id() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint_));
    return "ngram" + std::to_string(options_.order) + "-" + buf;
}

void NgramScorer::directional(const Direction& dir, std::span<const TokenId> context, std::vector<double>& out) const {
    const std::size_t h = std::min<std::size_t>(context.size(), static_cast<std::size_t>(options_.order - 1));
    // Orders whose context never occurred in training drop out of the mix.
    const Followers* bi = nullptr;
    const Followers* tri = nullptr;
    if (h >= 1)
        if (const auto it = dir.bigram.find(key1(context[0])); it != dir.bigram.end()) bi = &it->second;
    if (h >= 2)
        if (const auto it = dir.trigram.find(key2(context[0], context[1])); it != dir.trigram.end()) tri = &it->second;
    double w1 = options_.interpolation[0];
    double w2 = bi ? options_.interpolation[1] : 0.0;
    double w3 = tri ? options_.interpolation[2] : 0.0;
    const double norm = w1 + w2 + w3;
    w1 /= norm;
    w2 /= norm;
    w3 /= norm;
    const double lv = options_.lambda * static_cast<double>(size_);

    out.resize(size_);
    double base = 0.0;
    auto apply = [&](const Followers& f, double weight) {
        const double denom = f.total + lv;
        base += weight * options_.lambda / denom;
        for (const auto& [i, c] : f.counts) out[i] += weight * c / denom;
    };
    for (std::size_t i = 0; i < size_; ++i) out[i] = w1 * unigram_prob_[i];
    if (bi) apply(*bi, w2);
    if (tri) apply(*tri, w3);
    if (base != 0.0)
        for (auto& v : out) v += base;
}

std::vector<double> NgramScorer::distribution(std::span<const TokenId> tokens, std::size_t position) const {
    const auto n = static_cast<std::ptrdiff_t>(tokens.size());
    const auto p = static_cast<std::ptrdiff_t>(position);
    const std::size_t reach = static_cast<std::size_t>(options_.order - 1);
    std::vector<TokenId> left;
    std::vector<TokenId> right;
    for (std::ptrdiff_t i = p - 1; left.size() < reach; --i) {
        const TokenId t = i < 0 ? Vocabulary::kBos : tokens[static_cast<std::size_t>(i)];
        if (t == Vocabulary::kMask) break;
        left.push_back(t);
    }
    for (std::ptrdiff_t i = p + 1; right.size() < reach; ++i) {
        const TokenId t = i >= n ? Vocabulary::kEos : tokens[static_cast<std::size_t>(i)];
        if (t == Vocabulary::kMask) break;
        right.push_back(t);
    }
    std::vector<double> l;
    std::vector<double> r;
    directional(forward_, left, l);
    directional(backward_, right, r);
    double total = 0.0;
    for (std::size_t i = 0; i < size_; ++i) {
        l[i] = l[i] * r[i] / unigram_prob_[i];
        total += l[i];
    }
    for (auto& v : l) v /= total;
    return l;
}

std::vector<double> NgramScorer::forward_distribution(std::span<const TokenId> history) const {
    std::vector<TokenId> context;
    for (auto it = history.rbegin(); it != history.rend() && context.size() < 2; ++it) context.push_back(*it);
    while (context.size() < 2) context.push_back(Vocabulary::kBos);
    std::vector<double> out;
    directional(forward_, context, out);
    return out;
}

MaskResponse NgramScorer::score(const MaskQuery& query) const {
    MaskResponse resp;
    resp.model_id = model_id();
    resp.consecutive_mask_model = route_mask_model(longest_mask_run(query.tokens), mask_models());
    for (auto c : query.candidates)
        if (c < Vocabulary::kFirstPredictable || static_cast<std::size_t>(c) >= tokenizer_->vocab().size())
            throw std::invalid_argument("candidate token is not predictable");
    const std::size_t k = std::min(query.top_k, size_);
    std::vector<std::uint32_t> order(size_);
    for (std::size_t pos = 0; pos < query.tokens.size(); ++pos) {
        if (query.tokens[pos] != Vocabulary::kMask) continue;
        const auto dist = distribution(query.tokens, pos);
        std::iota(order.begin(), order.end(), 0u);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::uint32_t a, std::uint32_t b) { return dist[a] != dist[b] ? dist[a] > dist[b] : a < b; });
        MaskScores s;
        s.top.reserve(k);
        for (std::size_t j = 0; j < k; ++j)
            s.top.push_back({static_cast<TokenId>(order[j]) + Vocabulary::kFirstPredictable, std::log(dist[order[j]])});
        double tail = 0.0;
        for (std::size_t j = k; j < size_; ++j) tail += dist[order[j]];
        s.tail_logmass = tail > 0.0 ? std::log(tail) : -std::numeric_limits<double>::infinity();
        for (auto c : query.candidates) s.candidates.push_back({c, std::log(dist[index(c)])});
        resp.per_mask.push_back(std::move(s));
    }
    return resp;
}

}  // namespace scriptorium
