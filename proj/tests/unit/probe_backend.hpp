#pragma once

#include <map>
#include <memory>

#include "scriptorium/attention.hpp"
#include "scriptorium/rng.hpp"

namespace test {

// Attention-only backend over known treebank sentences. Head (layer, head) of
// `perfect` sends every dependent's attention to the first token of its
// gold target; all other rows and heads are seeded random stochastic rows that
// also put mass on the sentinels.
class ProbeBackend final : public scriptorium::ScorerBackend {
public:
    ProbeBackend(std::shared_ptr<const scriptorium::Tokenizer> tok, std::span<const scriptorium::TreebankSentence> sentences,
                 std::span<const scriptorium::DependencyInstance> instances, std::pair<std::size_t, std::size_t> perfect,
                 std::size_t layers = 12, std::size_t heads = 12)
        : tok_(std::move(tok)), perfect_(perfect), layers_(layers), heads_(heads) {
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            auto st = scriptorium::sentence_tokens(*tok_, sentences[s]);
            Entry e{st.alignment, std::vector<std::size_t>(sentences[s].words.size(), scriptorium::kSpecialToken)};
            for (const auto& x : instances)
                if (x.sentence == s && e.target[x.dependent] == scriptorium::kSpecialToken) e.target[x.dependent] = x.head;
            known_.emplace(std::move(st.tokens), std::move(e));
        }
    }

    const scriptorium::Tokenizer& tokenizer() const override { return *tok_; }
    std::size_t context_limit() const override { return 512; }
    std::string model_id() const override { return "probe"; }
    scriptorium::MaskResponse score(const scriptorium::MaskQuery&) const override { return {}; }
    bool supports_attention() const override { return true; }
    std::pair<std::size_t, std::size_t> attention_shape() const override { return {layers_, heads_}; }

    scriptorium::AttentionTensor attention(std::span<const scriptorium::TokenId> tokens) const override {
        const std::vector<scriptorium::TokenId> key(tokens.begin(), tokens.end());
        const auto& e = known_.at(key);
        const std::size_t n = tokens.size();
        scriptorium::AttentionTensor t(layers_, heads_, n);
        scriptorium::Pcg32 rng(n, 5);
        for (std::size_t l = 0; l < layers_; ++l)
            for (std::size_t h = 0; h < heads_; ++h)
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t w = e.alignment.token_word[i];
                    if (l == perfect_.first && h == perfect_.second && w != scriptorium::kSpecialToken &&
                        e.target[w] != scriptorium::kSpecialToken) {
                        std::size_t j = 0;
                        while (e.alignment.token_word[j] != e.target[w]) ++j;
                        t.at(l, h, i, j) = 0.6;
                        t.at(l, h, i, 0) = 0.4;  // sentinel mass is dropped before the argmax
                        continue;
                    }
                    double total = 0.0;
                    for (std::size_t j = 0; j < n; ++j) total += t.at(l, h, i, j) = rng.uniform() + 1e-3;
                    for (std::size_t j = 0; j < n; ++j) t.at(l, h, i, j) /= total;
                }
        return t;
    }

private:
    struct Entry {
        scriptorium::TokenAlignment alignment;
        std::vector<std::size_t> target;
    };
    std::shared_ptr<const scriptorium::Tokenizer> tok_;
    std::pair<std::size_t, std::size_t> perfect_;
    std::size_t layers_;
    std::size_t heads_;
    std::map<std::vector<scriptorium::TokenId>, Entry> known_;
};

// Word tokenizer over the comparison forms of the treebank words.
inline std::shared_ptr<scriptorium::WordTokenizer> treebank_tokenizer(std::span<const scriptorium::TreebankSentence> sentences) {
    std::vector<scriptorium::NormalizedText> texts;
    for (const auto& s : sentences) {
        std::string joined;
        for (const auto& w : s.words) joined += (joined.empty() ? "" : " ") + w.form;
        texts.push_back(scriptorium::normalize(joined, scriptorium::kComparisonPolicy));
    }
    return std::make_shared<scriptorium::WordTokenizer>(scriptorium::WordTokenizer::build(texts));
}

}  // namespace test
