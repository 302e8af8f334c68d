#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "scriptorium/scorer.hpp"

namespace scriptorium {

struct NgramOptions {
    int order = 3;         // 1..3; contexts of order-1 tokens on each side
    double lambda = 0.01;  // add-lambda smoothing
    // Interpolation weights for unigram, bigram, trigram estimates; renormalized
    // over the orders whose context occurred in training.
    std::array<double, 3> interpolation{0.1, 0.3, 0.6};
    std::size_t context_limit = 512;
};

// Reference scorer: p(w | left, right) proportional to
// P_left(w | left) * P_right(w | right) / P_unigram(w), where P_left and
// P_right are interpolated add-lambda n-gram models trained left-to-right and
// right-to-left. Other masks in the query cut the context they fall in.
class NgramScorer final : public ScorerBackend {
public:
    NgramScorer(std::shared_ptr<const Tokenizer> tokenizer, std::span<const Tokenization> corpus, NgramOptions options = {});

    const Tokenizer& tokenizer() const override { return *tokenizer_; }
    std::size_t context_limit() const override { return options_.context_limit; }
    std::string model_id() const override;
    MaskResponse score(const MaskQuery& query) const override;

    // Full distribution over predictable ids (index = id - kFirstPredictable)
    // for the mask at `position`. Sums to 1.
    std::vector<double> distribution(std::span<const TokenId> tokens, std::size_t position) const;

    // Left-to-right model alone, used by the synthetic corpus sampler.
    std::vector<double> forward_distribution(std::span<const TokenId> history) const;

    const NgramOptions& options() const { return options_; }

private:
    struct Followers {
        std::vector<std::pair<std::uint32_t, double>> counts;  // predictable index, count
        double total = 0.0;
    };
    struct Direction {
        std::unordered_map<std::uint64_t, Followers> bigram;   // key: one context token
        std::unordered_map<std::uint64_t, Followers> trigram;  // key: two context tokens (nearest last)
    };

    void add_sequence(std::span<const TokenId> tokens);
    void directional(const Direction& dir, std::span<const TokenId> context, std::vector<double>& out) const;
    std::size_t index(TokenId id) const { return static_cast<std::size_t>(id - Vocabulary::kFirstPredictable); }

    std::shared_ptr<const Tokenizer> tokenizer_;
    NgramOptions options_;
    std::size_t size_ = 0;  // predictable vocabulary size
    std::vector<double> unigram_counts_;
    double unigram_total_ = 0.0;
    std::vector<double> unigram_prob_;
    Direction forward_;
    Direction backward_;
    std::uint64_t fingerprint_ = 0;
};

}  // namespace scriptorium
