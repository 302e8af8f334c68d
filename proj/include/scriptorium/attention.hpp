#pragma once

#include <array>
#include <cstddef>
#include <istream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scriptorium/scorer.hpp"
#include "scriptorium/tensor.hpp"

namespace scriptorium {

// Word index of every token; kSpecialToken marks sentinels (classifier,
// separator) whose rows and columns are dropped.
inline constexpr std::size_t kSpecialToken = std::numeric_limits<std::size_t>::max();

struct TokenAlignment {
    std::vector<std::size_t> token_word;
    std::size_t words = 0;
};

// Attention between words: columns of special tokens are dropped and each
// token row renormalized; attention from a multi-token word is the mean of its
// token rows, attention to it the sum of its columns. Rows stay stochastic.
// Throws std::invalid_argument when the alignment length differs from the
// tensor, a word has no token, or a token row has no mass left.
AttentionTensor word_level_attention(const AttentionTensor& tokens, const TokenAlignment& alignment);

// argmax of the row; ties go to the lowest index.
std::size_t attends_most(std::span<const double> row);
std::size_t attends_most(const AttentionTensor& words, std::size_t layer, std::size_t head, std::size_t from);

// Perseus-style tab-separated dependency rows: ID FORM POS HEAD DEPREL.
// POS is the nine-position morphological tag (e.g. "n-s---mn-"), HEAD 0 is the
// root. Sentences are separated by blank lines; "# sent_id = X" names one.
struct TreebankWord {
    std::size_t id = 0;  // 1-based
    std::string form;
    std::string pos;
    std::size_t head = 0;
    std::string deprel;

    bool operator==(const TreebankWord&) const = default;
};

struct TreebankSentence {
    std::string id;
    std::vector<TreebankWord> words;

    bool operator==(const TreebankSentence&) const = default;
};

struct TreebankParse {
    std::vector<TreebankSentence> sentences;
    std::vector<std::string> diagnostics;  // "line N: ..."
};

// Columns may be separated by tabs or runs of spaces. Malformed rows are
// skipped with a diagnostic; they never abort the file.
TreebankParse ingest_treebank(std::istream& in);
TreebankParse ingest_treebank_text(std::string_view text);
std::string export_treebank(std::span<const TreebankSentence> sentences);

enum class GrammarTask {
    men_particle,
    interjection_vocative,
    article_infinitive,
    particle_optative,
    article_noun,
    article_adjective,
    adjective_noun,
    genitive_noun,
};
inline constexpr std::array<GrammarTask, 8> kGrammarTasks{
    GrammarTask::men_particle,  GrammarTask::interjection_vocative, GrammarTask::article_infinitive,
    GrammarTask::particle_optative, GrammarTask::article_noun,      GrammarTask::article_adjective,
    GrammarTask::adjective_noun, GrammarTask::genitive_noun};

const char* task_name(GrammarTask t);   // "men-particle", ...
const char* task_label(GrammarTask t);  // table wording
GrammarTask parse_task(std::string_view name);  // throws ConfigError

// One extraction rule. The dependent must match form/pos/deprel; without
// `answer` the target is the dependent's head, which must match head_pos.
// With `answer` the target is the nearest following word in the sentence whose
// form matches it, else the dependent itself. Forms are matched in comparison
// form (no diacritics, lower case). Every pattern must match the whole field.
struct TaskRule {
    GrammarTask task{};
    std::string dep_form = ".*";
    std::string dep_pos = ".*";
    std::string dep_rel = ".*";
    std::string head_pos = ".*";
    std::optional<std::string> answer;
};

// Rule tables are TSV: task, dep_form, dep_pos, dep_rel, head_pos, answer;
// "*" means any and "-" no answer. Throws ConfigError naming the line.
std::vector<TaskRule> parse_task_rules(std::string_view tsv);
std::string default_task_rules_tsv();
std::vector<TaskRule> default_task_rules();

// Attention is read from `dependent` to `head` (0-based word indices).
struct DependencyInstance {
    std::size_t sentence = 0;
    std::size_t dependent = 0;
    std::size_t head = 0;
    GrammarTask task{};

    bool operator==(const DependencyInstance&) const = default;
};

// Arcs whose head lies outside the sentence are skipped with a diagnostic.
std::vector<DependencyInstance> extract_instances(std::span<const TreebankSentence> sentences,
                                                  std::span<const TaskRule> rules,
                                                  std::vector<std::string>* diagnostics = nullptr);

// Tokens for a sentence as the backend sees it: a leading BOS and trailing EOS
// sentinel around the pieces of each word.
struct SentenceTokens {
    std::vector<TokenId> tokens;
    TokenAlignment alignment;
};
SentenceTokens sentence_tokens(const Tokenizer& tok, const TreebankSentence& sentence);

struct OffsetBaseline {
    int best_k = 0;
    double accuracy = 0.0;
    std::array<double, 21> per_offset{};  // k = -10 .. 10
};

// Accuracy of always predicting the word k positions from the dependent,
// maximized over k in [-10, 10]; ties keep the smallest |k|, then negative k.
OffsetBaseline fixed_offset_baseline(std::span<const DependencyInstance> instances);

// Fraction of instances whose dependent attends most to the head. Throws
// CapabilityError when the backend has no attention.
double evaluate_head(const ScorerBackend& backend, std::span<const TreebankSentence> sentences,
                     std::span<const DependencyInstance> instances, std::size_t layer, std::size_t head);

struct TaskHeadReport {
    GrammarTask task{};
    std::size_t instances = 0;
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::vector<double> accuracy;  // layer-major
    std::size_t best_layer = 0;
    std::size_t best_head = 0;
    double best_accuracy = 0.0;
    OffsetBaseline baseline;
};

// Every head on every task, one attention call per sentence. Tasks without
// instances are left out.
std::vector<TaskHeadReport> evaluate_all_heads(const ScorerBackend& backend, std::span<const TreebankSentence> sentences,
                                               std::span<const DependencyInstance> instances, std::size_t threads = 0);

std::string head_report_json(std::span<const TaskHeadReport> reports);
//   Grammatical task | Accuracy | Specialized attention head | Fixed-offset baseline
std::string render_head_table(std::span<const TaskHeadReport> reports);

}  // namespace scriptorium
