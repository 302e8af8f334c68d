#pragma once

#include <memory>
#include <string>
#include <vector>

#include "scriptorium/ngram.hpp"
#include "scriptorium/text.hpp"

namespace test {

inline std::vector<scriptorium::NormalizedText> texts(const std::vector<std::string>& raw,
                                                      scriptorium::NormalizationPolicy policy = {}) {
    std::vector<scriptorium::NormalizedText> out;
    for (const auto& r : raw) out.push_back(scriptorium::normalize(r, policy));
    return out;
}

struct Model {
    std::vector<scriptorium::NormalizedText> corpus;
    std::shared_ptr<scriptorium::WordTokenizer> tokenizer;
    std::vector<scriptorium::Tokenization> tokenized;
    std::shared_ptr<scriptorium::NgramScorer> scorer;

    scriptorium::Tokenization tokenize(const std::string& raw) const {
        return tokenizer->tokenize(scriptorium::normalize(raw, tokenizer->policy()));
    }
    scriptorium::TokenId id(const std::string& piece) const { return tokenizer->vocab().lookup(piece); }
};

inline Model word_model(const std::vector<std::string>& raw, scriptorium::NgramOptions options = {}) {
    Model m;
    m.corpus = texts(raw);
    m.tokenizer = std::make_shared<scriptorium::WordTokenizer>(scriptorium::WordTokenizer::build(m.corpus));
    for (const auto& t : m.corpus) m.tokenized.push_back(m.tokenizer->tokenize(t));
    m.scorer = std::make_shared<scriptorium::NgramScorer>(m.tokenizer, m.tokenized, options);
    return m;
}

}  // namespace test
