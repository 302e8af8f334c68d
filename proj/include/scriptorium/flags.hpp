#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scriptorium/rng.hpp"
#include "scriptorium/scorer.hpp"
#include "scriptorium/scribal.hpp"

namespace scriptorium {

struct Suggestion {
    std::string word;
    double chance = 0.0;  // chained p(word | context), unnormalized
    double distance = 0.0;

    bool operator==(const Suggestion&) const = default;
};

struct FlagRecord {
    std::size_t word_index = 0;
    std::string word;  // comparison form
    double chance = 0.0;
    double confidence_restricted = 0.0;  // max chance over W_k(word)
    double confidence_global = 0.0;      // max chance over the whole vocabulary
    double confidence_alternative = 0.0;  // max chance over W_k(word) without word itself
    double scribal_dist = 0.0;           // word -> restricted top suggestion
    double scribal_dist_global = 0.0;    // word -> global top suggestion
    double rho = 1.0;                    // chance / confidence_restricted
    bool degenerate = false;             // W_k(word) = {word}
    std::string top_global;
    std::vector<Suggestion> suggestions;  // W_k(word) by descending chance, then word

    bool operator==(const FlagRecord&) const = default;
};

struct FlagOptions {
    double k = 3.0;
    std::size_t max_suggestions = 10;
    std::size_t max_mask_count = 7;
    // Beam width for the global top suggestion.
    std::size_t global_beam = 10;
};

// One record per word of `text`, which must be normalized with the backend
// tokenizer's policy. The candidate set of word i is W_k(w_i) from `index`
// plus the global top suggestion when it lies within distance k.
std::vector<FlagRecord> compute_flags(const ScorerBackend& backend, const NormalizedText& text,
                                      const NeighborhoodIndex& index, const FlagOptions& options = {});

// Record for a single word; compute_flags calls this for every index.
FlagRecord flag_word(const ScorerBackend& backend, const NormalizedText& text, const Tokenization& tokens,
                     std::size_t word_index, const NeighborhoodIndex& index, const FlagOptions& options = {});

// Indices into `records`: ascending rho, then ascending chance, then word_index.
std::vector<std::size_t> rank_by_rho(const std::vector<FlagRecord>& records);
// Ascending chance, then word_index.
std::vector<std::size_t> rank_by_chance(const std::vector<FlagRecord>& records);
// Best alternative in W_k (confidence_alternative), descending unless `ascending`; ties by word_index.
std::vector<std::size_t> rank_by_confidence(const std::vector<FlagRecord>& records, bool ascending = false);

struct ThresholdScheme {
    std::string name;
    double max_distance = 3.0;
    double min_confidence = 0.5;
    std::optional<double> max_chance;

    static ThresholdScheme paper_default();   // confidence >= 0.5, distance <= 3
    static ThresholdScheme high_precision();  // 0.9, chance <= 1e-6, distance <= 2
    static ThresholdScheme high_recall();     // 0.5, chance <= 1e-4, distance <= 4
    // Throws ConfigError for unknown names.
    static ThresholdScheme named(std::string_view name);
};

// Keeps records with confidence_global >= min_confidence, scribal_dist_global
// <= max_distance and (when set) chance <= max_chance, ordered by increasing
// chance (ties by word_index).
std::vector<FlagRecord> apply_thresholds(const std::vector<FlagRecord>& records, const ThresholdScheme& scheme);

// Flag report line; keys in a fixed order.
std::string flag_report_line(const FlagRecord& record, std::string_view document, std::size_t context_begin,
                             std::size_t context_end);
struct FlagReportEntry {
    std::string document;
    std::size_t context_begin = 0;
    std::size_t context_end = 0;
    FlagRecord record;
};
FlagReportEntry parse_flag_report_line(std::string_view line);

// Explicit joint distribution over fixed-length sentences drawn from a word
// list; sentence index is the base-|words| number of its word indices.
struct ToyJoint {
    std::vector<std::string> words;
    std::size_t length = 0;
    std::vector<double> p;

    std::size_t universe() const { return p.size(); }
    std::vector<std::size_t> decode(std::size_t sentence) const;
    std::size_t encode(std::span<const std::size_t> word_ids) const;
    // p(words[w] at position i | the other words of `sentence`).
    double conditional(std::size_t sentence, std::size_t position, std::size_t w) const;
};

// Random positive joint over `n_words` distinct words of length 1..max_word_len
// from `alphabet`.
ToyJoint random_joint(Pcg32& rng, std::u32string_view alphabet, std::size_t max_word_len, std::size_t n_words,
                      std::size_t sentence_length);

struct PropositionCheck {
    bool degenerate = false;  // the maximum over W_1(s) is not unique
    bool claim_a = false;     // s* == s  iff  rho_i > 1 for all i
    bool claim_b = false;     // s* != s  ->  the differing index is argmin rho
    bool claim_c = false;     // s* != s  ->  s* uses the restricted top suggestion there
    std::vector<double> rho;  // over W_1(w_i) without w_i; +inf when that set is empty
    std::size_t argmin_index = 0;
    std::size_t best_sentence = 0;

    bool holds() const { return degenerate || (claim_a && claim_b && claim_c); }
};

// Exhaustive check of the single-character correction property under unit costs.
PropositionCheck verify_proposition(const ToyJoint& joint, std::size_t sentence);

// Exposes a ToyJoint as a scorer: masked positions are marginalized exactly.
class JointScorer final : public ScorerBackend {
public:
    explicit JointScorer(ToyJoint joint);

    const Tokenizer& tokenizer() const override { return *tokenizer_; }
    std::size_t context_limit() const override { return joint_.length; }
    std::string model_id() const override { return "toy-joint"; }
    MaskResponse score(const MaskQuery& query) const override;

    const ToyJoint& joint() const { return joint_; }
    std::shared_ptr<const WordTokenizer> word_tokenizer() const { return tokenizer_; }

private:
    ToyJoint joint_;
    std::shared_ptr<const WordTokenizer> tokenizer_;
    std::vector<TokenId> word_token_;  // word index -> token id
};

}  // namespace scriptorium
