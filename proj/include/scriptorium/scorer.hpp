#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scriptorium/tensor.hpp"
#include "scriptorium/text.hpp"

namespace scriptorium {

struct ScoredToken {
    TokenId token = Vocabulary::kUnk;
    double logprob = 0.0;  // natural log

    bool operator==(const ScoredToken&) const = default;
};

struct MaskQuery {
    std::vector<TokenId> tokens;  // Vocabulary::kMask marks masked positions
    std::size_t top_k = 10;
    std::vector<TokenId> candidates;  // scored at every mask even outside top_k
};

struct MaskScores {
    std::vector<ScoredToken> top;         // descending logprob, ties by ascending id
    std::vector<ScoredToken> candidates;  // parallel to MaskQuery::candidates
    double tail_logmass = -std::numeric_limits<double>::infinity();  // log of mass outside `top`
};

struct MaskResponse {
    std::vector<MaskScores> per_mask;  // masks in position order
    std::string model_id;
    int consecutive_mask_model = 1;
};

// Longest run of adjacent masks in `tokens`.
int longest_mask_run(std::span<const TokenId> tokens);
// Picks the fine-tuned variant for a run of masks: the largest available count
// not exceeding `run` (runs >= 5 use the 5-mask model when present).
int route_mask_model(int run, std::span<const int> available);

// Conditional token distribution p(w | w_-i). Implementations must be safe to
// call concurrently.
class ScorerBackend {
public:
    virtual ~ScorerBackend() = default;

    virtual const Tokenizer& tokenizer() const = 0;
    virtual std::size_t context_limit() const = 0;
    virtual std::string model_id() const = 0;
    // Number of ids that can be predicted (ids from Vocabulary::kFirstPredictable).
    virtual std::size_t predictable_size() const { return tokenizer().vocab().size() - Vocabulary::kFirstPredictable; }
    virtual std::vector<int> mask_models() const { return {1}; }
    virtual MaskResponse score(const MaskQuery& query) const = 0;

    virtual bool supports_attention() const { return false; }
    // {layers, heads per layer}; {0, 0} without attention support.
    virtual std::pair<std::size_t, std::size_t> attention_shape() const { return {0, 0}; }
    // Throws CapabilityError unless supports_attention().
    virtual AttentionTensor attention(std::span<const TokenId> tokens) const;
};

// Replaces `mask_positions` with masks and scores them. Throws
// std::out_of_range for bad positions and TruncationError when the context
// exceeds the backend's limit.
MaskResponse score_masks(const ScorerBackend& backend, std::span<const TokenId> context,
                         std::span<const std::size_t> mask_positions, std::size_t top_k);

// Token window [begin, end) of at most `limit` tokens containing [first, last).
// The window is centred on the masked range and its edges are pulled in to
// punctuation boundaries when that keeps at least half of the budget.
struct ContextWindow {
    std::size_t begin = 0;
    std::size_t end = 0;
};
ContextWindow choose_window(const Tokenization& text, std::size_t first, std::size_t last, std::size_t limit);

// tokens[0, first) + `count` masks + tokens[last, end)
std::vector<TokenId> replace_with_masks(std::span<const TokenId> tokens, std::size_t first, std::size_t last,
                                        std::size_t count);

enum class FillOrder { left_to_right, lowest_entropy_first };

struct BeamOptions {
    std::size_t beam_width = 10;
    FillOrder order = FillOrder::left_to_right;
};

struct SpanHypothesis {
    std::vector<TokenId> tokens;       // fills for the masks, in position order
    std::vector<double> step_logprobs;  // in fill order
    double logprob = 0.0;              // sum of step_logprobs
    std::string detokenized;
};

// Fills every mask in `context` (at least one). Each step re-queries the
// backend with the tokens committed so far. Returns at most beam_width
// hypotheses sorted by descending logprob (ties by token sequence).
std::vector<SpanHypothesis> beam_search(const ScorerBackend& backend, std::span<const TokenId> context,
                                        const BeamOptions& options = {});

// Chained left-to-right log-probability of `fill` placed into the masks of `context`.
double sequence_logprob(const ScorerBackend& backend, std::span<const TokenId> context, std::span<const TokenId> fill);

struct WordScore {
    std::string word;
    std::size_t token_count = 0;
    double logprob = 0.0;      // chained, unnormalized
    double probability = 0.0;  // exp(logprob)
    double normalized = 0.0;   // probability / sum over scored candidates
};

struct WordDistribution {
    std::vector<WordScore> scores;     // in candidate order, skipped ones omitted
    std::vector<std::string> skipped;  // candidates with more pieces than max_mask_count
    double total = 0.0;

    const WordScore* find(std::string_view word) const;
};

// p(candidate | context) for each candidate word (comparison form), masking
// word `word_index` of `text` with the candidate's own token count.
WordDistribution word_distribution(const ScorerBackend& backend, const Tokenization& text, std::size_t word_index,
                                   std::span<const std::string> candidates, std::size_t max_mask_count = 7);

struct ScorerMetrics {
    double top1_accuracy = 0.0;
    double top5_accuracy = 0.0;
    double pseudo_perplexity = 0.0;
    std::size_t positions = 0;
};

// Single-token masked prediction over every non-special token of the corpus.
ScorerMetrics eval_scorer(const ScorerBackend& backend, std::span<const Tokenization> test_corpus);

}  // namespace scriptorium
