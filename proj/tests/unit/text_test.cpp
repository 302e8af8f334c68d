#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/text.hpp"

using namespace scriptorium;

TEST_CASE("empty input has no words") {
    const auto t = normalize("");
    CHECK(t.normalized.empty());
    CHECK(t.word_spans.empty());
}

TEST_CASE("diacritic-stripped comparison view") {
    const auto t = normalize("ἦ δὲ", kComparisonPolicy);
    REQUIRE(t.word_count() == 2);
    CHECK(t.comparison_word(0) == "η");
    CHECK(t.comparison_word(1) == "δε");
    CHECK(t.comparison_text() == "η δε");
    // the primary form keeps its diacritics
    CHECK(t.normalized == "ἦ δὲ");
}

TEST_CASE("word spans cover every non-space non-punctuation character") {
    const auto t = normalize("  λόγος,  καὶ\tἔργον. ");
    CHECK(t.normalized == "λόγος, καὶ ἔργον.");
    REQUIRE(t.word_count() == 3);
    std::string joined;
    for (std::size_t i = 0; i < t.word_count(); ++i) joined += std::string(t.word(i)) + "|";
    CHECK(joined == "λόγος|καὶ|ἔργον|");
    for (std::size_t b = 0; b < t.normalized.size(); ++b) {
        bool in_word = false;
        for (const auto& s : t.word_spans) in_word |= b >= s.start && b < s.end;
        const bool space = t.normalized[b] == ' ';
        CHECK((in_word || space || t.punctuation_mask[b]));
        CHECK(!(in_word && t.punctuation_mask[b]));
    }
    for (std::size_t i = 1; i < t.word_count(); ++i) CHECK(t.word_spans[i - 1].end < t.word_spans[i].start);
}

TEST_CASE("normalization is NFC and idempotent") {
    // decomposed alpha + combining acute
    const std::string decomposed = "\xce\xb1\xcc\x81 \xce\xb5\xcc\x94";
    const auto once = normalize(decomposed);
    CHECK(once.normalized == "ά ἑ");
    for (const char* raw : {"ἦ δὲ γάρ, φησι", "  α  β\n", "οὗτος δὶς βασιλεύσας· ἦ"}) {
        const auto a = normalize(raw);
        const auto b = normalize(a.normalized);
        CHECK(a.normalized == b.normalized);
        CHECK(a.word_spans == b.word_spans);
    }
}

TEST_CASE("invalid UTF-8 reports the byte offset") {
    try {
        normalize(std::string("αβ\xff", 5));
        FAIL("expected an ingestion error");
    } catch (const IngestionError& e) {
        CHECK(e.byte_offset == 4);
    }
}

TEST_CASE("elision marks stay with their word") {
    const auto t = normalize("μέν, δ’ ἄν");
    REQUIRE(t.word_count() == 3);
    CHECK(t.word(1) == "δ’");
}

TEST_CASE("dictionary counts") {
    const auto corpus = test::texts({"α β α", "α"});
    const auto dict = build_dictionary(corpus);
    CHECK(dict.count("α") == 3);
    CHECK(dict.count("β") == 1);
    CHECK(dict.counts().size() == 2);
    CHECK(dict.total() == 4);
    CHECK_FALSE(dict.contains("α", 10));
    for (const auto& t : corpus)
        for (const auto& w : t.comparison) CHECK(dict.contains(w, 1));
    std::vector<std::string> warnings;
    CHECK(build_dictionary({}, &warnings).counts().empty());
    CHECK(warnings.size() == 1);
}

TEST_CASE("gap character count ignores punctuation and spaces") {
    const auto t = normalize("τὰ ἑστηκότα· αἱ δὲ");
    CHECK(count_gap_characters({1, 3}, t) == 10);
    CHECK(count_gap_characters({1, 1}, t) == 0);
    CHECK(count_gap_characters({0, 1}, t) == 2);
    CHECK_THROWS_AS(count_gap_characters({2, 5}, t), std::out_of_range);
    CHECK(count_letters("αβ γ") == 3);
    CHECK(count_letters("δ’") == 1);
}

TEST_CASE("word tokenizer round-trips its corpus") {
    const auto corpus = test::texts({"οὗτος δὶς βασιλεύσας ηὔχετο καὶ τρὶς καὶ τετράκις· ἦ δὲ γάρ, φησι, μετὰ νέφος ὁ ἥλιος.",
                                     "«α» β; γ."});
    const auto tok = WordTokenizer::build(corpus);
    for (const auto& text : corpus) {
        const auto t = tok.tokenize(text);
        CHECK(tok.detokenize(t) == text.normalized);
        for (std::size_t i = 1; i < t.size(); ++i) CHECK(t.token_to_word[i - 1] <= t.token_to_word[i]);
        std::size_t words = 0;
        for (std::size_t i = 0; i < t.size(); ++i) words += t.punctuation[i] ? 0 : 1;
        CHECK(words == text.word_count());
    }
}

TEST_CASE("wordpiece splits a word into continuation pieces") {
    const std::vector<std::string> pieces{"ουκ", "οι", "##δα", "ποτε", "##ρον", "ποτ"};
    const WordPieceTokenizer tok(pieces);
    const auto text = normalize("Οὐκ οἶδα πότερον", tok.policy());
    const auto t = tok.tokenize(text);
    REQUIRE(t.size() == 5);
    CHECK(t.word_token_count == std::vector<std::size_t>{1, 2, 2});
    CHECK(tok.vocab().piece(t.tokens[2]) == "##δα");
    CHECK(tok.detokenize(t) == "ουκ οιδα ποτερον");
    CHECK(tok.join(std::span(t.tokens).subspan(1, 2)) == "οιδα");
    CHECK(tok.encode_word("ξ") == std::vector<TokenId>{Vocabulary::kUnk});
}

TEST_CASE("manifest parsing and document split") {
    const auto entries = parse_manifest("# comment\na.txt\tpsellus\thist\n\nb.txt\tpsellus\tchron\n");
    REQUIRE(entries.size() == 2);
    CHECK(entries[1].work == "chron");
    CHECK_THROWS_AS(parse_manifest("only-a-path\n"), ConfigError);

    const auto s1 = split_corpus(20, 0.1, 7);
    const auto s2 = split_corpus(20, 0.1, 7);
    CHECK(s1.test == s2.test);
    CHECK(s1.test.size() == 2);
    CHECK(s1.train.size() == 18);
}

TEST_CASE("paragraphs cut at sentence ends after the target") {
    std::string raw;
    for (int s = 0; s < 10; ++s) raw += "α β γ δ ε. ";
    const auto paras = split_paragraphs(normalize(raw), 12);
    std::size_t words = 0;
    for (const auto& p : paras) {
        words += p.word_count();
        CHECK(p.word_count() >= 10);
        CHECK(p.normalized.back() == '.');
    }
    CHECK(words == 50);
}

TEST_CASE("corpus loads from a manifest") {
    const auto dir = std::filesystem::temp_directory_path() / "scriptorium_corpus_test";
    std::filesystem::create_directories(dir);
    write_file(dir / "a.txt", "ἦ δὲ γάρ");
    write_file(dir / "manifest.tsv", "a.txt\tpsellus\thist\n");
    const auto docs = load_corpus(dir / "manifest.tsv", kComparisonPolicy);
    REQUIRE(docs.size() == 1);
    CHECK(docs[0].text.comparison_word(0) == "η");
    CHECK(docs[0].author == "psellus");
    std::filesystem::remove_all(dir);
}
