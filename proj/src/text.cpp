#include "scriptorium/text.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "scriptorium/errors.hpp"

namespace scriptorium {

namespace {

const icu::Normalizer2& nfc() {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
    return *n;
}

const icu::Normalizer2& nfd() {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* n = icu::Normalizer2::getNFDInstance(status);
    if (U_FAILURE(status)) throw Error("ICU NFD normalizer unavailable");
    return *n;
}

std::string to_std(const icu::UnicodeString& s) {
    std::string out;
    s.toUTF8String(out);
    return out;
}

void validate_utf8(std::string_view raw) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(raw.data());
    const auto length = static_cast<std::int32_t>(raw.size());
    std::int32_t i = 0;
    while (i < length) {
        const std::int32_t at = i;
        UChar32 c = 0;
        U8_NEXT(bytes, i, length, c);
        if (c < 0) throw IngestionError("invalid UTF-8", static_cast<std::size_t>(at));
    }
}

bool is_word_char(UChar32 c) {
    return (U_GET_GC_MASK(c) & (U_GC_L_MASK | U_GC_M_MASK | U_GC_N_MASK)) != 0;
}

bool is_space(UChar32 c) { return u_isUWhiteSpace(c) != 0; }

// Decodes one code point from already-validated UTF-8.
UChar32 decode_at(std::string_view s, std::size_t& i) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(s.data());
    auto pos = static_cast<std::int32_t>(i);
    UChar32 c = 0;
    U8_NEXT(bytes, pos, static_cast<std::int32_t>(s.size()), c);
    i = static_cast<std::size_t>(pos);
    return c;
}

}  // namespace

bool is_elision_mark(char32_t c) {
    return c == U'\'' || c == U'’' || c == U'ʼ' || c == U'᾽' || c == U'᾿';
}

std::u32string to_u32(std::string_view utf8) {
    std::u32string out;
    std::size_t i = 0;
    while (i < utf8.size()) {
        const UChar32 c = decode_at(utf8, i);
        if (c < 0) throw IngestionError("invalid UTF-8", i);
        out.push_back(static_cast<char32_t>(c));
    }
    return out;
}

std::string to_utf8(std::u32string_view text) {
    std::string out;
    for (char32_t c : text) {
        char buf[4];
        std::int32_t n = 0;
        UBool error = false;
        U8_APPEND(reinterpret_cast<std::uint8_t*>(buf), n, 4, static_cast<UChar32>(c), error);
        if (error) throw Error("cannot encode code point as UTF-8");
        out.append(buf, static_cast<std::size_t>(n));
    }
    return out;
}

std::string comparison_form(std::string_view word, NormalizationPolicy policy) {
    if (!policy.strip_diacritics && !policy.case_fold) return std::string(word);
    UErrorCode status = U_ZERO_ERROR;
    icu::UnicodeString s = icu::UnicodeString::fromUTF8(icu::StringPiece(word.data(), static_cast<std::int32_t>(word.size())));
    if (policy.strip_diacritics) {
        icu::UnicodeString decomposed = nfd().normalize(s, status);
        icu::UnicodeString kept;
        for (std::int32_t i = 0; i < decomposed.length();) {
            const UChar32 c = decomposed.char32At(i);
            if ((U_GET_GC_MASK(c) & U_GC_MN_MASK) == 0) kept.append(c);
            i += U16_LENGTH(c);
        }
        s = nfc().normalize(kept, status);
    }
    if (policy.case_fold) s.foldCase();
    if (U_FAILURE(status)) throw Error("normalization failed");
    return to_std(s);
}

std::size_t count_letters(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::UnicodeString s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<std::int32_t>(text.size())));
    const icu::UnicodeString d = nfd().normalize(s, status);
    if (U_FAILURE(status)) throw Error("normalization failed");
    std::size_t n = 0;
    for (std::int32_t i = 0; i < d.length();) {
        const UChar32 c = d.char32At(i);
        const auto mask = U_GET_GC_MASK(c);
        if ((mask & U_GC_L_MASK) != 0 && (mask & U_GC_LM_MASK) == 0) ++n;
        i += U16_LENGTH(c);
    }
    return n;
}

std::size_t count_gap_characters(WordRange range, const NormalizedText& text) {
    if (range.first > range.last || range.last > text.word_count()) throw std::out_of_range("gap word range outside text");
    std::size_t n = 0;
    for (std::size_t i = range.first; i < range.last; ++i) n += count_letters(text.word(i));
    return n;
}

std::string NormalizedText::comparison_text() const {
    std::string out;
    std::size_t at = 0;
    for (const auto& span : word_spans) {
        out.append(normalized, at, span.start - at);
        out += comparison[span.word_index];
        at = span.end;
    }
    out.append(normalized, at, std::string::npos);
    return out;
}

NormalizedText normalize(std::string_view raw, NormalizationPolicy policy) {
    validate_utf8(raw);
    NormalizedText out;
    out.raw = std::string(raw);
    out.policy = policy;

    UErrorCode status = U_ZERO_ERROR;
    const icu::UnicodeString composed =
        nfc().normalize(icu::UnicodeString::fromUTF8(icu::StringPiece(raw.data(), static_cast<std::int32_t>(raw.size()))), status);
    if (U_FAILURE(status)) throw Error("NFC normalization failed");
    const std::string nfc_text = to_std(composed);

    // Collapse whitespace.
    std::string& norm = out.normalized;
    bool pending_space = false;
    for (std::size_t i = 0; i < nfc_text.size();) {
        const std::size_t start = i;
        const UChar32 c = decode_at(nfc_text, i);
        if (is_space(c)) {
            pending_space = !norm.empty();
            continue;
        }
        if (pending_space) norm.push_back(' ');
        pending_space = false;
        norm.append(nfc_text, start, i - start);
    }

    // Segment words; elision marks stick to the word they follow.
    out.punctuation_mask.assign(norm.size(), false);
    std::size_t word_start = std::string::npos;
    auto close_word = [&](std::size_t end) {
        if (word_start == std::string::npos) return;
        out.word_spans.push_back({word_start, end, out.word_spans.size()});
        word_start = std::string::npos;
    };
    for (std::size_t i = 0; i < norm.size();) {
        const std::size_t start = i;
        const UChar32 c = decode_at(norm, i);
        if (is_space(c)) {
            close_word(start);
        } else if (is_word_char(c)) {
            if (word_start == std::string::npos) word_start = start;
        } else if (is_elision_mark(static_cast<char32_t>(c)) && word_start != std::string::npos) {
            // part of the current word
        } else {
            close_word(start);
            std::fill(out.punctuation_mask.begin() + static_cast<std::ptrdiff_t>(start),
                      out.punctuation_mask.begin() + static_cast<std::ptrdiff_t>(i), true);
        }
    }
    close_word(norm.size());

    out.comparison.reserve(out.word_spans.size());
    for (std::size_t w = 0; w < out.word_spans.size(); ++w) out.comparison.push_back(comparison_form(out.word(w), policy));
    return out;
}

void AuthorDictionary::add(std::string_view word, std::int64_t n) {
    auto it = counts_.find(word);
    if (it == counts_.end()) it = counts_.emplace(std::string(word), 0).first;
    it->second += n;
    total_ += n;
}

std::int64_t AuthorDictionary::count(std::string_view word) const {
    const auto it = counts_.find(word);
    return it == counts_.end() ? 0 : it->second;
}

std::vector<std::string> AuthorDictionary::words_with_min_count(std::int64_t threshold) const {
    std::vector<std::string> out;
    for (const auto& [w, c] : counts_)
        if (c >= threshold) out.push_back(w);
    return out;
}

AuthorDictionary build_dictionary(std::span<const NormalizedText> corpus, std::vector<std::string>* warnings) {
    AuthorDictionary dict;
    if (corpus.empty() && warnings != nullptr) warnings->emplace_back("empty corpus: dictionary is empty");
    for (const auto& text : corpus)
        for (const auto& w : text.comparison) dict.add(w);
    return dict;
}

Vocabulary::Vocabulary(std::string id) : id_(std::move(id)) {
    add("[MASK]");
    add("<s>");
    add("</s>");
    add("[UNK]");
}

TokenId Vocabulary::add(std::string_view piece, bool punctuation) {
    if (auto existing = find(piece)) return *existing;
    const auto id = static_cast<TokenId>(pieces_.size());
    pieces_.emplace_back(piece);
    punctuation_.push_back(punctuation);
    index_.emplace(std::string(piece), id);
    return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view piece) const {
    const auto it = index_.find(std::string(piece));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocabulary::lookup(std::string_view piece) const { return find(piece).value_or(kUnk); }

bool Vocabulary::is_continuation(TokenId id) const {
    const auto& p = piece(id);
    return p.size() > 2 && p.starts_with("##");
}

Tokenization Tokenizer::tokenize(const NormalizedText& text) const {
    Tokenization out;
    out.vocab_id = vocab().id();
    const std::string& s = text.normalized;
    std::size_t next_word = 0;
    bool space = false;
    for (std::size_t i = 0; i < s.size();) {
        if (next_word < text.word_spans.size() && text.word_spans[next_word].start == i) {
            const auto& span = text.word_spans[next_word];
            out.word_first_token.push_back(out.tokens.size());
            const auto pieces = encode_word(text.comparison[next_word]);
            for (std::size_t p = 0; p < pieces.size(); ++p) {
                out.tokens.push_back(pieces[p]);
                out.token_to_word.push_back(next_word);
                out.punctuation.push_back(false);
                out.space_before.push_back(p == 0 && space);
            }
            out.word_token_count.push_back(pieces.size());
            space = false;
            i = span.end;
            ++next_word;
            continue;
        }
        const std::size_t start = i;
        const UChar32 c = decode_at(s, i);
        if (c == ' ') {
            space = true;
            continue;
        }
        const std::string_view mark(s.data() + start, i - start);
        out.tokens.push_back(vocab().lookup(mark));
        out.token_to_word.push_back(next_word == 0 ? 0 : next_word - 1);
        out.punctuation.push_back(true);
        out.space_before.push_back(space);
        space = false;
    }
    return out;
}

std::string Tokenizer::detokenize(const Tokenization& t) const {
    std::string out;
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
        if (t.space_before[i]) out.push_back(' ');
        const auto id = t.tokens[i];
        out += vocab().is_continuation(id) ? vocab().piece(id).substr(2) : vocab().piece(id);
    }
    return out;
}

std::string Tokenizer::join(std::span<const TokenId> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto id = tokens[i];
        if (vocab().is_continuation(id)) {
            out += vocab().piece(id).substr(2);
            continue;
        }
        if (i > 0) out.push_back(' ');
        out += vocab().piece(id);
    }
    return out;
}

WordTokenizer WordTokenizer::build(std::span<const NormalizedText> corpus) {
    std::set<std::string> words;
    std::set<std::string> marks;
    for (const auto& text : corpus) {
        words.insert(text.comparison.begin(), text.comparison.end());
        for (std::size_t i = 0; i < text.normalized.size();) {
            const std::size_t start = i;
            decode_at(text.normalized, i);
            if (text.punctuation_mask[start]) marks.insert(text.normalized.substr(start, i - start));
        }
    }
    Vocabulary vocab("word");
    for (const auto& m : marks) vocab.add(m, true);
    for (const auto& w : words) vocab.add(w);
    return WordTokenizer(std::move(vocab), corpus.empty() ? NormalizationPolicy{} : corpus.front().policy);
}

std::vector<TokenId> WordTokenizer::encode_word(std::string_view word) const { return {vocab_.lookup(word)}; }

WordPieceTokenizer::WordPieceTokenizer(std::span<const std::string> pieces, NormalizationPolicy policy)
    : vocab_("wordpiece"), policy_(policy) {
    for (const auto& p : pieces) {
        if (p.empty()) continue;
        std::size_t i = 0;
        const UChar32 c = decode_at(p, i);
        vocab_.add(p, i == p.size() && !is_word_char(c) && !is_space(c));
    }
}

std::vector<TokenId> WordPieceTokenizer::encode_word(std::string_view word) const {
    // Code point boundaries, so matches never split a UTF-8 sequence.
    std::vector<std::size_t> bounds{0};
    for (std::size_t i = 0; i < word.size();) {
        decode_at(word, i);
        bounds.push_back(i);
    }
    std::vector<TokenId> out;
    std::size_t b = 0;
    while (b + 1 < bounds.size()) {
        std::optional<TokenId> hit;
        std::size_t hit_end = b;
        for (std::size_t e = bounds.size() - 1; e > b; --e) {
            std::string candidate(word.substr(bounds[b], bounds[e] - bounds[b]));
            if (b > 0) candidate.insert(0, "##");
            if (auto id = vocab_.find(candidate)) {
                hit = id;
                hit_end = e;
                break;
            }
        }
        if (!hit) return {Vocabulary::kUnk};
        out.push_back(*hit);
        b = hit_end;
    }
    if (out.empty()) out.push_back(Vocabulary::kUnk);
    return out;
}

}  // namespace scriptorium
