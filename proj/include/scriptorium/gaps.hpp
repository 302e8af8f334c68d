#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scriptorium/rng.hpp"
#include "scriptorium/scorer.hpp"

namespace scriptorium {

inline constexpr std::size_t kMaxGapTokens = 7;
inline constexpr std::size_t kTopProbabilities = 10;
inline constexpr std::size_t kMinGapChars = 3;
inline constexpr std::size_t kMaxGapChars = 10;
inline constexpr std::size_t kFeatureDim = kMaxGapTokens * kTopProbabilities + (kMaxGapChars - kMinGapChars + 1);

// Whole words [gap.first, gap.last) of `text` hidden from the model.
struct GapTask {
    std::string id;
    NormalizedText text;  // normalized with the tokenizer's policy
    WordRange gap;
    std::size_t n_chars = 0;

    // 1 .. n_chars/2 + 2
    std::vector<std::size_t> candidate_counts() const;
};

// Throws std::invalid_argument when the gap's letter count is outside [3, 10].
GapTask make_gap_task(std::string id, NormalizedText text, WordRange gap);

// Token range [first, last) covered by the gap: the gap words and any
// punctuation between them, but not punctuation after the last word.
std::pair<std::size_t, std::size_t> gap_token_range(const Tokenization& tokens, WordRange gap);

// The hidden words rendered the way span hypotheses are rendered.
std::string gap_truth(const Tokenizer& tok, const Tokenization& tokens, WordRange gap);
// Number of tokens the gap occupies.
std::size_t gap_token_count(const Tokenization& tokens, WordRange gap);

struct GapOptions {
    std::size_t beam_width = 32;  // hypotheses per count; features use the first 10
    bool normalize_rows = false;  // feed raw chained probabilities by default
};

using GapFeatures = std::array<double, kFeatureDim>;

struct GapAnalysis {
    GapFeatures features{};
    // hypotheses[m - 1] for every candidate count m; empty beyond the range.
    std::array<std::vector<SpanHypothesis>, kMaxGapTokens> hypotheses;
    std::vector<std::string> warnings;
};

// Runs one beam search per candidate count and builds the 7x10 + one-hot features.
GapAnalysis analyze_gap(const ScorerBackend& backend, const GapTask& task, const GapOptions& options = {});

struct TrainOptions {
    std::size_t hidden = 64;
    std::size_t batch = 32;
    double learning_rate = 0.01;
    std::size_t epochs = 50;
    std::uint64_t seed = 1;
};

struct TrainingExample {
    GapFeatures features{};
    std::size_t count = 1;  // 1..7
};

// kFeatureDim -> hidden (ReLU) -> 7 (softmax), cross-entropy loss.
class TokCountNet {
public:
    TokCountNet() = default;
    TokCountNet(std::size_t input, std::size_t hidden, std::size_t output, Pcg32& rng);

    std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(w2.rows()); }

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    // P(gap_toks = m), index m - 1.
    std::array<double, kMaxGapTokens> posterior(const GapFeatures& f) const;

    struct Gradients {
        Eigen::MatrixXd w1, w2;
        Eigen::VectorXd b1, b2;
    };
    // Mean cross-entropy over the columns of `x` (labels are 0-based classes).
    double loss(const Eigen::MatrixXd& x, const std::vector<std::size_t>& labels) const;
    Gradients gradients(const Eigen::MatrixXd& x, const std::vector<std::size_t>& labels) const;
    void step(const Gradients& g, double learning_rate);

    // Parameters in serialization order: w1 (row-major), b1, w2 (row-major), b2.
    std::vector<double> parameters() const;
    void set_parameters(const std::vector<double>& p);

    // 16-byte header {magic "TCN1", input, hidden, output as uint32 LE}, then float32 LE parameters.
    std::string serialize() const;
    static TokCountNet deserialize(const std::string& bytes);
    void save(const std::filesystem::path& path) const;
    static TokCountNet load(const std::filesystem::path& path);

    Eigen::MatrixXd w1, w2;  // hidden x input, output x hidden
    Eigen::VectorXd b1, b2;
};

struct TrainResult {
    TokCountNet net;
    std::vector<double> epoch_loss;  // full-set loss after each epoch; [0] is before training
    bool single_class = false;
    double accuracy = 0.0;  // training accuracy at the end
};

TrainResult train_tokcount_net(const std::vector<TrainingExample>& examples, const TrainOptions& options = {});

struct RankedSpan {
    std::string text;
    std::size_t token_count = 0;
    double span_logprob = 0.0;   // log p(s | c, toks = m)
    double count_logprob = 0.0;  // log P(gap_toks = m | c)
    double score = 0.0;          // sum of the two

    bool operator==(const RankedSpan&) const = default;
};

struct GapPrediction {
    std::string gap_id;
    std::size_t n_chars = 0;
    std::array<double, kMaxGapTokens> posterior{};
    std::vector<RankedSpan> spans;        // exact character length, descending score
    std::vector<RankedSpan> near_misses;  // off by one character; never ranked
    std::string diagnostic;               // set when no span matched
};

GapPrediction predict_gap(const GapAnalysis& analysis, const TokCountNet& net, const GapTask& task, std::size_t top_k = 10);

// 1-based rank of `truth` among the spans, 0 when absent.
std::size_t hit_rank(const GapPrediction& p, const std::string& truth);

std::string gap_report_line(const GapPrediction& p, const std::optional<std::string>& truth);

}  // namespace scriptorium
