#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scriptorium {

struct NormalizationPolicy {
    bool strip_diacritics = false;
    bool case_fold = false;

    bool operator==(const NormalizationPolicy&) const = default;
};

// Comparison view used for flag generation and dictionaries.
inline constexpr NormalizationPolicy kComparisonPolicy{true, true};

struct WordSpan {
    std::size_t start = 0;  // byte offset into NormalizedText::normalized
    std::size_t end = 0;    // one past the last byte
    std::size_t word_index = 0;

    bool operator==(const WordSpan&) const = default;
};

// Half-open range of word indices [first, last).
struct WordRange {
    std::size_t first = 0;
    std::size_t last = 0;

    std::size_t size() const { return last - first; }
    bool empty() const { return last <= first; }
};

// NFC text with whitespace runs collapsed to one ASCII space and trimmed.
// `punctuation_mask` has one entry per byte of `normalized`; every byte of a
// punctuation code point is marked. `comparison` holds each word in the
// policy's view (diacritics stripped / case folded when requested); it is
// derived at construction and never replaces `normalized`.
struct NormalizedText {
    std::string raw;
    std::string normalized;
    std::vector<WordSpan> word_spans;
    std::vector<bool> punctuation_mask;
    std::vector<std::string> comparison;
    NormalizationPolicy policy;

    std::size_t word_count() const { return word_spans.size(); }
    std::string_view word(std::size_t i) const {
        const auto& s = word_spans.at(i);
        return std::string_view(normalized).substr(s.start, s.end - s.start);
    }
    const std::string& comparison_word(std::size_t i) const { return comparison.at(i); }

    // `normalized` with every word replaced by its comparison form.
    std::string comparison_text() const;
};

// Throws IngestionError on invalid UTF-8.
NormalizedText normalize(std::string_view raw, NormalizationPolicy policy = {});

// Single word in the policy's view.
std::string comparison_form(std::string_view word, NormalizationPolicy policy);

// Base letters after diacritic stripping; punctuation, whitespace, digits and
// elision marks are not counted.
std::size_t count_letters(std::string_view text);

// Letter count of the words in `range`. Throws std::out_of_range.
std::size_t count_gap_characters(WordRange range, const NormalizedText& text);

bool is_elision_mark(char32_t c);
std::u32string to_u32(std::string_view utf8);
std::string to_utf8(std::u32string_view text);

class AuthorDictionary {
public:
    explicit AuthorDictionary(std::int64_t min_count = 1) : min_count_(min_count) {}

    void add(std::string_view word, std::int64_t n = 1);
    std::int64_t count(std::string_view word) const;
    bool contains(std::string_view word) const { return contains(word, min_count_); }
    bool contains(std::string_view word, std::int64_t threshold) const { return count(word) >= threshold && count(word) > 0; }

    const std::map<std::string, std::int64_t, std::less<>>& counts() const { return counts_; }
    std::int64_t total() const { return total_; }
    std::int64_t min_count() const { return min_count_; }
    std::vector<std::string> words_with_min_count(std::int64_t threshold) const;

private:
    std::map<std::string, std::int64_t, std::less<>> counts_;
    std::int64_t total_ = 0;
    std::int64_t min_count_;
};

// Keys are comparison forms. An empty corpus yields an empty dictionary and
// appends a warning when `warnings` is given.
AuthorDictionary build_dictionary(std::span<const NormalizedText> corpus,
                                  std::vector<std::string>* warnings = nullptr);

using TokenId = std::int32_t;

class Vocabulary {
public:
    static constexpr TokenId kMask = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kUnk = 3;
    // Ids >= kUnk can be predicted by a scorer.
    static constexpr TokenId kFirstPredictable = kUnk;

    explicit Vocabulary(std::string id = "word");

    TokenId add(std::string_view piece, bool punctuation = false);
    std::optional<TokenId> find(std::string_view piece) const;
    TokenId lookup(std::string_view piece) const;

    const std::string& piece(TokenId id) const { return pieces_.at(static_cast<std::size_t>(id)); }
    bool is_special(TokenId id) const { return id < kUnk; }
    bool is_punctuation(TokenId id) const { return punctuation_.at(static_cast<std::size_t>(id)); }
    bool is_continuation(TokenId id) const;
    std::size_t size() const { return pieces_.size(); }
    const std::string& id() const { return id_; }

private:
    std::string id_;
    std::vector<std::string> pieces_;
    std::vector<bool> punctuation_;
    std::unordered_map<std::string, TokenId> index_;
};

struct Tokenization {
    std::vector<TokenId> tokens;
    std::vector<std::size_t> token_to_word;  // punctuation attaches to the preceding word
    std::vector<bool> punctuation;
    std::vector<bool> space_before;
    std::vector<std::size_t> word_first_token;
    std::vector<std::size_t> word_token_count;
    std::string vocab_id;

    std::size_t size() const { return tokens.size(); }
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual const Vocabulary& vocab() const = 0;
    // Pieces of one word given in comparison form.
    virtual std::vector<TokenId> encode_word(std::string_view word) const = 0;
    // View that texts must be normalized with before tokenize().
    virtual NormalizationPolicy policy() const = 0;

    // Tokenizes the comparison view of `text`.
    Tokenization tokenize(const NormalizedText& text) const;
    // Inverse of tokenize: reproduces text.comparison_text() when every piece is known.
    std::string detokenize(const Tokenization& tokenization) const;
    // Space-separated rendering of a bare token run; continuation pieces are glued.
    std::string join(std::span<const TokenId> tokens) const;
};

// One token per word; vocabulary collected from a corpus.
class WordTokenizer final : public Tokenizer {
public:
    WordTokenizer(Vocabulary vocab, NormalizationPolicy policy) : vocab_(std::move(vocab)), policy_(policy) {}
    // Policy is taken from the corpus texts.
    static WordTokenizer build(std::span<const NormalizedText> corpus);

    const Vocabulary& vocab() const override { return vocab_; }
    std::vector<TokenId> encode_word(std::string_view word) const override;
    NormalizationPolicy policy() const override { return policy_; }

private:
    Vocabulary vocab_;
    NormalizationPolicy policy_;
};

// Greedy longest-match subword tokenizer; continuation pieces carry a "##" prefix.
class WordPieceTokenizer final : public Tokenizer {
public:
    explicit WordPieceTokenizer(std::span<const std::string> pieces, NormalizationPolicy policy = kComparisonPolicy);

    const Vocabulary& vocab() const override { return vocab_; }
    std::vector<TokenId> encode_word(std::string_view word) const override;
    NormalizationPolicy policy() const override { return policy_; }

private:
    Vocabulary vocab_;
    NormalizationPolicy policy_;
};

}  // namespace scriptorium
