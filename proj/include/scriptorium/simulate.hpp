#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scriptorium/flags.hpp"
#include "scriptorium/gaps.hpp"
#include "scriptorium/ngram.hpp"
#include "scriptorium/rng.hpp"

namespace scriptorium {

// Explicit random language: Zipfian vocabulary over the Greek alphabet, part
// of it one-letter variants of other words, and a sparse first-order Markov
// chain with sentence ends.
struct LanguageOptions {
    std::size_t base_words = 1200;
    double variant_fraction = 0.35;
    std::size_t successors = 24;
    double zipf_exponent = 1.05;
    double sentence_end = 0.07;
    std::uint64_t seed = 1;
};

class SyntheticLanguage {
public:
    explicit SyntheticLanguage(const LanguageOptions& options);

    // Sentences of words separated by spaces, each ending in ".", until at least `n_words` words.
    std::string sample_document(Pcg32& rng, std::size_t n_words) const;
    const std::vector<std::string>& words() const { return words_; }

private:
    std::size_t draw(Pcg32& rng, const std::vector<double>& cumulative) const;

    std::vector<std::string> words_;
    std::vector<double> start_;                 // cumulative
    std::vector<std::vector<std::size_t>> next_;
    std::vector<std::vector<double>> next_cum_;
    double sentence_end_;
};

// Corpus sampled from the forward component of a reference n-gram model
// trained on the explicit language, and a second model trained on a
// disjoint sample of that corpus for scoring.
struct SyntheticOptions {
    LanguageOptions language;
    std::size_t seed_words = 150000;    // explicit-language sample for the generator
    std::size_t train_words = 300000;   // generator sample for the scorer and dictionary
    std::size_t paragraphs = 500;
    std::size_t paragraph_words = 230;
    NgramOptions generator{3, 0.001, {0.02, 0.18, 0.8}, 512};
    NgramOptions scorer{};
    std::uint64_t seed = 7;
};

struct SyntheticSetup {
    std::shared_ptr<WordTokenizer> tokenizer;
    std::shared_ptr<NgramScorer> generator;
    std::shared_ptr<NgramScorer> scorer;
    std::vector<NormalizedText> training;    // comparison policy
    std::vector<NormalizedText> paragraphs;  // held out, comparison policy
    AuthorDictionary dictionary;
};

// Sampling from `model`'s left-to-right distribution: "." ends sentences.
std::string sample_from_model(const NgramScorer& model, Pcg32& rng, std::size_t n_words);

SyntheticSetup make_synthetic_setup(const SyntheticOptions& options);

struct CorruptionRecord {
    std::size_t paragraph_id = 0;
    std::size_t word_index = 0;
    std::string original;
    std::string corrupted;
    std::size_t char_position = 0;  // code point index inside the word
    std::uint64_t seed = 0;
    std::size_t attempts = 0;
};

inline constexpr std::size_t kCorruptionBudget = 10000;
inline constexpr std::int64_t kCorruptionMinCount = 10;

// Picks a random word and letter and substitutes a random letter of the
// dictionary's alphabet, retrying (fresh word and position each time) until
// the result is a different dictionary word with count >= min_count.
// Returns nullopt when the budget runs out.
std::optional<CorruptionRecord> corrupt_paragraph(const NormalizedText& paragraph, const AuthorDictionary& dict, Pcg32& rng,
                                                  std::int64_t min_count = kCorruptionMinCount,
                                                  std::size_t budget = kCorruptionBudget);

// `paragraph` with word `r.word_index` replaced by `r.corrupted`.
NormalizedText apply_corruption(const NormalizedText& paragraph, const CorruptionRecord& r);

enum class RankScheme { rho, chance, confidence };
const char* scheme_name(RankScheme s);
RankScheme parse_scheme(std::string_view name);  // throws ConfigError
std::vector<std::size_t> rank_records(const std::vector<FlagRecord>& records, RankScheme scheme, bool confidence_ascending = false);

struct DetectionOptions {
    std::size_t instances = 615;
    std::vector<RankScheme> schemes{RankScheme::rho, RankScheme::chance, RankScheme::confidence};
    double k = 1.0;
    bool confidence_ascending = false;
    std::uint64_t seed = 11;
    std::size_t threads = 0;  // 0: hardware concurrency
};

struct SchemeResult {
    RankScheme scheme = RankScheme::rho;
    std::vector<std::size_t> ranks;  // 1-based rank of the corrupted word, per counted instance
    std::vector<double> percentiles;  // (rank - 1) / paragraph words
    double top1 = 0.0;
    double top5 = 0.0;
    double top10 = 0.0;
    double recovery_rate = 0.0;  // among top-1 hits, restricted top suggestion == original
};

struct EvalSummary {
    std::size_t instances = 0;  // counted
    std::size_t skipped = 0;
    std::vector<CorruptionRecord> corruptions;
    std::vector<std::size_t> paragraph_sizes;
    std::vector<SchemeResult> schemes;
    double dkw_epsilon = 0.0;  // alpha = 0.01
    double random_top1 = 0.0;  // mean of 1 / paragraph words
    std::vector<std::string> diagnostics;

    const SchemeResult& result(RankScheme s) const;
};

// Instance i corrupts paragraph i mod |paragraphs| with Pcg32::fork(seed, i)
// and ranks every word of the corrupted paragraph. Unit costs.
EvalSummary evaluate_detection(const ScorerBackend& backend, const std::vector<NormalizedText>& paragraphs,
                               const AuthorDictionary& dict, const DetectionOptions& options);

// Fixed layout:
//   Accuracy | Chance-confidence ratio | Chance alone | Confidence alone
//   Top-1    |                   90.5% |        59.7% |            54.2%
std::string render_accuracy_table(const EvalSummary& s);
std::string summary_json(const EvalSummary& s);

double dkw_epsilon(double alpha, std::size_t n);

struct PercentileCdf {
    std::vector<double> sorted;  // percentiles
    double epsilon = 0.0;

    double at(double x) const;  // fraction of samples <= x
    double lower(double x) const { return std::max(0.0, at(x) - epsilon); }
    double upper(double x) const { return std::min(1.0, at(x) + epsilon); }
};

// Percentile of each rank within its paragraph, (rank - 1) / size.
PercentileCdf percentile_cdf(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& paragraph_sizes,
                             double alpha = 0.01);

struct HypothesisSamples {
    std::string metric;
    std::vector<double> h0;  // -log T for untouched words
    std::vector<double> h1;  // -log T for corrupted words
};

// H1 uses single-token in-dictionary substitutions.
HypothesisSamples hypothesis_histograms(const ScorerBackend& backend, const std::vector<NormalizedText>& paragraphs,
                                        const AuthorDictionary& dict, RankScheme metric, std::size_t n_h0, std::size_t n_h1,
                                        std::uint64_t seed, double k = 1.0);
std::string write_hypothesis_tsv(const HypothesisSamples& s);
HypothesisSamples read_hypothesis_tsv(const std::string& tsv);

struct GapTruth {
    std::string id;
    std::string words;  // the hidden words exactly as in the normalized text
    std::size_t document = 0;
};

struct GeneratedGaps {
    std::vector<GapTask> tasks;
    std::vector<GapTruth> truth;  // parallel to tasks
};

// Whole-word spans with letter counts drawn uniformly from [3, 10].
GeneratedGaps generate_gap_tasks(const std::vector<NormalizedText>& documents, Pcg32& rng, std::size_t n_tasks,
                                 std::size_t max_attempts = 100000);

// Review payload: the text before and after the gap and its size; no hidden
// bytes. `title` names the source work when given.
std::string blind_payload(const GapTask& task, std::string_view title = {});
// Rebuilds a task from a blind payload; the gap becomes one placeholder word
// of n_chars letters, which analysis masks like the hidden words.
GapTask task_from_blind_payload(std::string_view payload, NormalizationPolicy policy);
std::string truth_line(const GapTruth& truth, std::string_view source = {});
GapTruth parse_truth_line(std::string_view line);

// Form used for exact-match scoring of fills: comparison view, single spaces,
// no space before punctuation. Span renderings and corpus text agree on it.
std::string canonical_fill(std::string_view text, NormalizationPolicy policy = kComparisonPolicy);

// Analysis features labelled with the true token count; gaps needing more
// than kMaxGapTokens tokens are left out.
std::vector<TrainingExample> gap_training_examples(const ScorerBackend& backend, const std::vector<GapTask>& tasks,
                                                   const GapOptions& options = {}, std::size_t threads = 0);

struct GapEvaluation {
    std::vector<GapPrediction> predictions;
    std::vector<std::string> truths;  // rendered like span hypotheses
    std::vector<std::size_t> ranks;   // 1-based hit rank, 0 when missed
    std::size_t top1 = 0;
    std::size_t top2 = 0;
    std::size_t top10 = 0;
    std::size_t length_mismatches = 0;  // returned spans whose letter count differs from the gap

    double accuracy(std::size_t hits) const { return ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size()); }
};

GapEvaluation evaluate_gaps(const ScorerBackend& backend, const TokCountNet& net, const std::vector<GapTask>& tasks,
                            const GapOptions& options = {}, std::size_t threads = 0);

}  // namespace scriptorium
