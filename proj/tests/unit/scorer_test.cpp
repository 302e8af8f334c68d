#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/scorer.hpp"

using namespace scriptorium;

namespace {

// Uniform over the predictable vocabulary.
class UniformBackend final : public ScorerBackend {
public:
    explicit UniformBackend(std::shared_ptr<const Tokenizer> tok) : tok_(std::move(tok)) {}
    const Tokenizer& tokenizer() const override { return *tok_; }
    std::size_t context_limit() const override { return 512; }
    std::string model_id() const override { return "uniform"; }
    MaskResponse score(const MaskQuery& q) const override {
        const std::size_t v = predictable_size();
        const double lp = -std::log(static_cast<double>(v));
        MaskResponse r;
        r.model_id = model_id();
        for (auto t : q.tokens) {
            if (t != Vocabulary::kMask) continue;
            MaskScores s;
            const std::size_t k = std::min(q.top_k, v);
            for (std::size_t j = 0; j < k; ++j) s.top.push_back({static_cast<TokenId>(j) + Vocabulary::kFirstPredictable, lp});
            s.tail_logmass = k < v ? std::log(static_cast<double>(v - k) / static_cast<double>(v)) : -INFINITY;
            for (auto c : q.candidates) s.candidates.push_back({c, lp});
            r.per_mask.push_back(std::move(s));
        }
        return r;
    }

private:
    std::shared_ptr<const Tokenizer> tok_;
};

const std::vector<std::string> kSmallCorpus{
    "α β γ δ. α β γ δ. β α δ γ. α γ β δ. δ γ β α.",
    "γ δ α β. α β δ. β γ δ α. α α β γ.",
};

double sum_exp(const MaskScores& s) {
    double t = 0.0;
    for (const auto& x : s.top) t += std::exp(x.logprob);
    if (std::isfinite(s.tail_logmass)) t += std::exp(s.tail_logmass);
    return t;
}

}  // namespace

TEST_CASE("mask model routing") {
    const std::vector<int> models{1, 2, 3, 4, 5};
    CHECK(route_mask_model(1, models) == 1);
    CHECK(route_mask_model(3, models) == 3);
    CHECK(route_mask_model(7, models) == 5);
    CHECK(route_mask_model(3, std::vector<int>{1}) == 1);
    const std::vector<TokenId> toks{5, 0, 0, 6, 0, 0, 0, 7};
    CHECK(longest_mask_run(toks) == 3);
}

TEST_CASE("n-gram distributions are normalized") {
    const auto m = test::word_model(kSmallCorpus);
    const auto t = m.tokenize("α β γ δ. β α δ γ.");
    for (std::size_t pos = 0; pos < t.size(); ++pos) {
        auto toks = t.tokens;
        toks[pos] = Vocabulary::kMask;
        const auto d = m.scorer->distribution(toks, pos);
        CHECK(std::accumulate(d.begin(), d.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        for (double p : d) CHECK(p > 0.0);
    }
    // every top-k, every mask: top plus tail is the whole mass
    std::vector<std::size_t> masks{1, 2, 6};
    for (std::size_t k : {1u, 3u, 100u}) {
        const auto r = score_masks(*m.scorer, t.tokens, masks, k);
        REQUIRE(r.per_mask.size() == 3);
        for (const auto& s : r.per_mask) {
            CHECK(sum_exp(s) == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(s.top.size() == std::min(k, m.scorer->predictable_size()));
            for (std::size_t j = 1; j < s.top.size(); ++j) CHECK(s.top[j - 1].logprob >= s.top[j].logprob);
        }
    }
}

TEST_CASE("n-gram prefers the attested continuation") {
    const auto m = test::word_model({"ὁ ἥλιος λάμπει. ὁ ἥλιος λάμπει. ὁ ἥλιος λάμπει. ὁ ἄνθρωπος λέγει."});
    const auto t = m.tokenize("ὁ ἥλιος λάμπει.");
    const std::size_t pos[] = {2};
    const auto r = score_masks(*m.scorer, t.tokens, pos, 1);
    CHECK(r.per_mask[0].top[0].token == m.id("λάμπει"));
}

TEST_CASE("score_masks validates its input") {
    const auto m = test::word_model(kSmallCorpus, NgramOptions{3, 0.01, {0.1, 0.3, 0.6}, 4});
    const auto t = m.tokenize("α β γ δ. β α δ γ.");
    const std::size_t bad[] = {99};
    const std::size_t ok[] = {0};
    CHECK_THROWS_AS(score_masks(*m.scorer, std::span(t.tokens).first(4), bad, 1), std::out_of_range);
    CHECK_THROWS_AS(score_masks(*m.scorer, t.tokens, ok, 1), TruncationError);
    CHECK_THROWS_AS(m.scorer->attention(t.tokens), CapabilityError);
}

TEST_CASE("beam search with a wide beam equals exhaustive enumeration") {
    // 4 words + UNK: |V| = 5
    const auto m = test::word_model({"α β γ δ α β δ γ α α β γ δ δ γ β α"});
    REQUIRE(m.scorer->predictable_size() == 5);
    const auto t = m.tokenize("α β γ δ α β");
    const std::size_t v = 5;
    for (std::size_t masks = 1; masks <= 3; ++masks) {
        const auto ctx = replace_with_masks(t.tokens, 2, 2 + masks, masks);
        std::size_t total = 1;
        for (std::size_t i = 0; i < masks; ++i) total *= v;

        std::vector<std::pair<double, std::vector<TokenId>>> all;
        for (std::size_t code = 0; code < total; ++code) {
            std::vector<TokenId> fill;
            for (std::size_t c = code, i = 0; i < masks; ++i, c /= v) fill.push_back(static_cast<TokenId>(c % v) + Vocabulary::kFirstPredictable);
            std::reverse(fill.begin(), fill.end());
            all.emplace_back(sequence_logprob(*m.scorer, ctx, fill), fill);
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });

        const auto beams = beam_search(*m.scorer, ctx, {total, FillOrder::left_to_right});
        REQUIRE(beams.size() == total);
        for (std::size_t i = 0; i < total; ++i) {
            CHECK(beams[i].logprob == doctest::Approx(all[i].first).epsilon(1e-9));
            CHECK(std::abs(beams[i].logprob - all[i].first) < 1e-9);
        }
        std::vector<double> mass;
        for (const auto& b : beams) mass.push_back(std::exp(b.logprob));
        CHECK(std::accumulate(mass.begin(), mass.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));

        const auto greedy = beam_search(*m.scorer, ctx, {1, FillOrder::left_to_right});
        CHECK(greedy[0].logprob <= all[0].first + 1e-12);
    }
}

TEST_CASE("single-mask beam equals the top-k list") {
    const auto m = test::word_model(kSmallCorpus);
    const auto t = m.tokenize("α β γ δ.");
    const auto ctx = replace_with_masks(t.tokens, 1, 2, 1);
    const std::size_t pos[] = {1};
    const auto r = score_masks(*m.scorer, ctx, pos, 3);
    const auto beams = beam_search(*m.scorer, ctx, {3, FillOrder::lowest_entropy_first});
    REQUIRE(beams.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(beams[i].tokens[0] == r.per_mask[0].top[i].token);
        CHECK(beams[i].logprob == r.per_mask[0].top[i].logprob);
    }
}

TEST_CASE("word distribution chains subword pieces") {
    const std::vector<std::string> pieces{"α", "β", "γ", "δ", "##α", "##β", "##γ", "ε"};
    auto tok = std::make_shared<WordPieceTokenizer>(pieces);
    std::vector<Tokenization> corpus;
    for (const char* raw : {"α β γ δ α", "β γαβ δ α", "γ αγ δ β", "α δ βα γ ε"})
        corpus.push_back(tok->tokenize(normalize(raw, tok->policy())));
    const NgramScorer scorer(tok, corpus);
    const auto text = tok->tokenize(normalize("α β γ δ", tok->policy()));

    const std::vector<std::string> cands{"γ", "γαβ", "αγ", "δ"};
    const auto dist = word_distribution(scorer, text, 2, cands);
    REQUIRE(dist.scores.size() == 4);

    // hand-run chain rule for "γαβ" = γ ##α ##β
    const auto ctx = replace_with_masks(text.tokens, 2, 3, 3);
    const auto g = tok->vocab().lookup("γ");
    const auto a = tok->vocab().lookup("##α");
    const auto b = tok->vocab().lookup("##β");
    auto step = ctx;
    const double p1 = scorer.distribution(step, 2)[static_cast<std::size_t>(g - Vocabulary::kFirstPredictable)];
    step[2] = g;
    const double p2 = scorer.distribution(step, 3)[static_cast<std::size_t>(a - Vocabulary::kFirstPredictable)];
    step[3] = a;
    const double p3 = scorer.distribution(step, 4)[static_cast<std::size_t>(b - Vocabulary::kFirstPredictable)];
    CHECK(dist.find("γαβ")->probability == doctest::Approx(p1 * p2 * p3).epsilon(1e-9));
    CHECK(dist.find("γαβ")->token_count == 3);

    const auto single_ctx = replace_with_masks(text.tokens, 2, 3, 1);
    const double pg = scorer.distribution(single_ctx, 2)[static_cast<std::size_t>(g - Vocabulary::kFirstPredictable)];
    const double pd = scorer.distribution(single_ctx, 2)[static_cast<std::size_t>(tok->vocab().lookup("δ") - Vocabulary::kFirstPredictable)];
    CHECK(dist.find("γ")->probability / dist.find("δ")->probability == doctest::Approx(pg / pd).epsilon(1e-9));

    double norm = 0.0;
    for (const auto& s : dist.scores) norm += s.normalized;
    CHECK(norm == doctest::Approx(1.0));

    const std::vector<std::string> only{"γ"};
    CHECK(word_distribution(scorer, text, 2, only).scores[0].normalized == 1.0);
    const auto capped = word_distribution(scorer, text, 2, cands, 2);
    CHECK(capped.skipped == std::vector<std::string>{"γαβ"});
}

TEST_CASE("uniform backend has perplexity equal to vocabulary size") {
    // 9 words + UNK
    const auto m = test::word_model({"α β γ δ ε ζ η θ ι"});
    const UniformBackend uniform(m.tokenizer);
    REQUIRE(uniform.predictable_size() == 10);
    const auto metrics = eval_scorer(uniform, m.tokenized);
    CHECK(metrics.positions == 9);
    CHECK(std::abs(metrics.pseudo_perplexity - 10.0) < 1e-12);
    CHECK(metrics.top5_accuracy <= 1.0);
}

TEST_CASE("n-gram scorer evaluates on held-out text") {
    const auto m = test::word_model(kSmallCorpus);
    const auto metrics = eval_scorer(*m.scorer, m.tokenized);
    CHECK(metrics.top1_accuracy > 0.3);
    CHECK(metrics.top5_accuracy >= metrics.top1_accuracy);
    CHECK(metrics.pseudo_perplexity < static_cast<double>(m.scorer->predictable_size()));
}

TEST_CASE("context window respects the limit") {
    const auto m = test::word_model(kSmallCorpus);
    const auto t = m.tokenize("α β γ δ. α β γ δ. β α δ γ. α γ β δ. δ γ β α. γ δ α β.");
    for (std::size_t limit : {6u, 8u, 12u}) {
        for (std::size_t first = 0; first + 2 <= t.size(); ++first) {
            const auto w = choose_window(t, first, first + 2, limit);
            CHECK(w.end - w.begin <= limit);
            CHECK(w.begin <= first);
            CHECK(w.end >= first + 2);
            CHECK(w.end - w.begin >= limit / 2);
        }
    }
    const auto whole = choose_window(t, 3, 4, 100);
    CHECK(whole.begin == 0);
    CHECK(whole.end == t.size());
}
