#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "probe_backend.hpp"
#include "helpers.hpp"
#include "scriptorium/errors.hpp"

using namespace scriptorium;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

TreebankParse sample() { return ingest_treebank_text(read_file(std::string(SCRIPTORIUM_FIXTURES) + "/treebank/sample.tsv")); }

AttentionTensor random_stochastic(Pcg32& rng, std::size_t layers, std::size_t heads, std::size_t n) {
    AttentionTensor t(layers, heads, n);
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i) {
                double total = 0.0;
                for (std::size_t j = 0; j < n; ++j) total += t.at(l, h, i, j) = rng.uniform() < 0.2 ? 0.0 : rng.uniform() + 1e-6;
                if (total == 0.0) total += t.at(l, h, i, i) = 1.0;
                for (std::size_t j = 0; j < n; ++j) t.at(l, h, i, j) /= total;
            }
    return t;
}

// Independent oracle: explicit word x word sums without reuse of the library code path.
double oracle(const AttentionTensor& t, const TokenAlignment& a, std::size_t l, std::size_t h, std::size_t from, std::size_t to) {
    double total = 0.0;
    std::size_t members = 0;
    for (std::size_t i = 0; i < t.size; ++i) {
        if (a.token_word[i] != from) continue;
        ++members;
        double kept = 0.0;
        double into = 0.0;
        for (std::size_t j = 0; j < t.size; ++j) {
            if (a.token_word[j] == kSpecialToken) continue;
            kept += t.at(l, h, i, j);
            if (a.token_word[j] == to) into += t.at(l, h, i, j);
        }
        total += into / kept;
    }
    return total / static_cast<double>(members);
}

}  // namespace

TEST_CASE("single-token words leave attention unchanged") {
    Pcg32 rng(1);
    const auto t = random_stochastic(rng, 2, 3, 5);
    const auto w = word_level_attention(t, {{0, 1, 2, 3, 4}, 5});
    REQUIRE(w.size == 5);
    for (std::size_t k = 0; k < t.weights.size(); ++k) CHECK(w.weights[k] == doctest::Approx(t.weights[k]).epsilon(1e-12));
}

TEST_CASE("attention to a two-token word is summed, from it averaged") {
    AttentionTensor t(1, 1, 3);
    const double rows[3][3] = {{0.5, 0.2, 0.3}, {0.1, 0.6, 0.3}, {0.3, 0.3, 0.4}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) t.at(0, 0, i, j) = rows[i][j];
    const auto w = word_level_attention(t, {{0, 1, 1}, 2});
    CHECK(w.at(0, 0, 0, 1) == doctest::Approx(0.5));
    CHECK(w.at(0, 0, 0, 0) == doctest::Approx(0.5));
    CHECK(w.at(0, 0, 1, 0) == doctest::Approx((0.1 + 0.3) / 2));
    CHECK(w.at(0, 0, 1, 1) == doctest::Approx((0.9 + 0.7) / 2));
}

TEST_CASE("special token columns are dropped and rows renormalized") {
    AttentionTensor t(1, 1, 4);
    const double rows[4][4] = {{0.25, 0.25, 0.25, 0.25}, {0.5, 0.3, 0.1, 0.1}, {0.8, 0.05, 0.15, 0.0}, {1, 0, 0, 0}};
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) t.at(0, 0, i, j) = rows[i][j];
    const auto w = word_level_attention(t, {{kSpecialToken, 0, 1, kSpecialToken}, 2});
    CHECK(w.at(0, 0, 0, 0) == doctest::Approx(0.75));
    CHECK(w.at(0, 0, 0, 1) == doctest::Approx(0.25));
    CHECK(w.at(0, 0, 1, 0) == doctest::Approx(0.25));
    CHECK(w.at(0, 0, 1, 1) == doctest::Approx(0.75));
}

TEST_CASE("aggregation keeps rows stochastic on random fixtures") {
    Pcg32 rng(77);
    double worst = 0.0;
    double worst_oracle = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t words = 1 + rng.below(8);
        TokenAlignment a;
        a.words = words;
        a.token_word.push_back(kSpecialToken);
        for (std::size_t w = 0; w < words; ++w)
            for (std::size_t k = 0, n = 1 + rng.below(3); k < n; ++k) a.token_word.push_back(w);
        if (rng.below(2)) a.token_word.push_back(kSpecialToken);
        const auto t = random_stochastic(rng, 2, 2, a.token_word.size());
        // Rows must keep some mass off the sentinels.
        bool usable = true;
        for (std::size_t l = 0; l < 2 && usable; ++l)
            for (std::size_t h = 0; h < 2 && usable; ++h)
                for (std::size_t i = 0; i < t.size && usable; ++i) {
                    if (a.token_word[i] == kSpecialToken) continue;
                    double kept = 0.0;
                    for (std::size_t j = 0; j < t.size; ++j)
                        if (a.token_word[j] != kSpecialToken) kept += t.at(l, h, i, j);
                    usable = kept > 0.0;
                }
        if (!usable) {
            CHECK_THROWS_AS(word_level_attention(t, a), std::invalid_argument);
            continue;
        }
        const auto w = word_level_attention(t, a);
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t i = 0; i < words; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < words; ++j) {
                        s += w.at(l, h, i, j);
                        CHECK(w.at(l, h, i, j) >= 0.0);
                        worst_oracle = std::max(worst_oracle, std::abs(w.at(l, h, i, j) - oracle(t, a, l, h, i, j)));
                    }
                    worst = std::max(worst, std::abs(s - 1.0));
                }
    }
    CHECK(worst <= 1e-6);
    CHECK(worst_oracle <= 1e-12);
}

TEST_CASE("misaligned tensors are rejected") {
    const AttentionTensor t(1, 1, 3);
    CHECK_THROWS_AS(word_level_attention(t, {{0, 1}, 2}), std::invalid_argument);
    CHECK_THROWS_AS(word_level_attention(t, {{0, 0, 2}, 3}), std::invalid_argument);  // word 1 has no token
    CHECK_THROWS_AS(word_level_attention(t, {{0, 1, 5}, 2}), std::invalid_argument);
}

TEST_CASE("attends_most") {
    CHECK(attends_most(std::vector<double>{0, 0, 1, 0}) == 2);
    CHECK(attends_most(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 0);
    CHECK(attends_most(std::vector<double>{0.1, 0.4, 0.4, 0.1}) == 1);
    CHECK_THROWS(attends_most(std::vector<double>{}));

    // μέν concentrating on a later δέ.
    const auto parse = ingest_treebank_text("1\tτὰ\tl-p---na-\t2\tATR\n2\tμὲν\tg--------\t0\tAuxY\n3\tἄλλα\ta-p---na-\t0\tOBJ\n"
                                            "4\tδὲ\tg--------\t0\tAuxY\n");
    AttentionTensor m(1, 1, 4);
    const double row[4] = {0.05, 0.2, 0.1, 0.65};
    for (std::size_t j = 0; j < 4; ++j) m.at(0, 0, 1, j) = row[j];
    CHECK(attends_most(m, 0, 0, 1) == 3);
    const auto inst = extract_instances(parse.sentences, default_task_rules());
    const auto men = std::find_if(inst.begin(), inst.end(), [](const auto& x) { return x.task == GrammarTask::men_particle; });
    REQUIRE(men != inst.end());
    CHECK(men->head == attends_most(m, 0, 0, men->dependent));

    // Relabeling the words permutes the answer the same way.
    Pcg32 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(10);
        std::vector<double> r(n);
        for (auto& v : r) v = std::floor(rng.uniform() * 5.0);  // ties are common
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint32_t>(i + 1))]);
        std::vector<double> permuted(n);
        for (std::size_t i = 0; i < n; ++i) permuted[perm[i]] = r[i];
        const std::size_t a = attends_most(r);
        const std::size_t b = attends_most(permuted);
        CHECK(permuted[b] == r[a]);
        const bool unique_max = std::count(r.begin(), r.end(), r[a]) == 1;
        if (unique_max) CHECK(b == perm[a]);
    }
}

TEST_CASE("treebank ingestion") {
    CHECK(ingest_treebank_text("").sentences.empty());

    const auto one = ingest_treebank_text("1\tὁ\tl-s---mn-\t2\tATR\n2\tλόγος\tn-s---mn-\t0\tSBJ\n");
    REQUIRE(one.sentences.size() == 1);
    const auto inst = extract_instances(one.sentences, default_task_rules());
    REQUIRE(inst.size() == 1);
    CHECK(inst[0] == DependencyInstance{0, 0, 1, GrammarTask::article_noun});

    const auto bad = ingest_treebank_text("1\tὁ\tl-s---mn-\t2\tATR\nx\ty\n3\tτε\tg--------\t0\tAuxY\n"
                                          "two\tλόγος\tn-s---mn-\t0\tSBJ\n2  λόγος   n-s---mn-  0  SBJ\n");
    REQUIRE(bad.diagnostics.size() == 3);
    CHECK(bad.diagnostics[0].rfind("line 2:", 0) == 0);
    CHECK(bad.diagnostics[1].rfind("line 3:", 0) == 0);
    CHECK(bad.diagnostics[2].rfind("line 4:", 0) == 0);
    REQUIRE(bad.sentences.size() == 1);
    CHECK(bad.sentences[0].words.size() == 2);
    CHECK(bad.sentences[0].words[1].form == "λόγος");

    std::vector<std::string> diag;
    const auto dangling = ingest_treebank_text("1\tὁ\tl-s---mn-\t9\tATR\n");
    CHECK(extract_instances(dangling.sentences, default_task_rules(), &diag).empty());
    CHECK(diag.size() == 1);
}

TEST_CASE("sample treebank yields every task") {
    const auto p = sample();
    CHECK(p.diagnostics.empty());
    REQUIRE(p.sentences.size() == 5);
    CHECK(p.sentences[2].id == "s3");
    const auto inst = extract_instances(p.sentences, default_task_rules());
    std::map<GrammarTask, std::vector<DependencyInstance>> by;
    for (const auto& x : inst) by[x.task].push_back(x);
    CHECK(by.size() == 8);
    CHECK(by[GrammarTask::men_particle] ==
          std::vector<DependencyInstance>{{0, 1, 5, GrammarTask::men_particle}, {2, 1, 1, GrammarTask::men_particle}});
    CHECK(by[GrammarTask::article_noun].size() == 4);
    CHECK(by[GrammarTask::interjection_vocative] == std::vector<DependencyInstance>{{1, 0, 1, GrammarTask::interjection_vocative}});
    CHECK(by[GrammarTask::article_infinitive] == std::vector<DependencyInstance>{{2, 2, 3, GrammarTask::article_infinitive}});
    CHECK(by[GrammarTask::particle_optative] == std::vector<DependencyInstance>{{3, 0, 1, GrammarTask::particle_optative}});
    CHECK(by[GrammarTask::genitive_noun] == std::vector<DependencyInstance>{{4, 2, 3, GrammarTask::genitive_noun}});
    CHECK(by[GrammarTask::article_adjective] == std::vector<DependencyInstance>{{4, 4, 5, GrammarTask::article_adjective}});
    CHECK(by[GrammarTask::adjective_noun] == std::vector<DependencyInstance>{{1, 2, 1, GrammarTask::adjective_noun}});

    // Elided δ' answers μέν as well.
    const auto elided = ingest_treebank_text("1\tμὲν\tg--------\t0\tAuxY\n2\tλέγει\tv3spia---\t0\tPRED\n3\tδ’\tg--------\t0\tAuxY\n");
    const auto e = extract_instances(elided.sentences, default_task_rules());
    REQUIRE(e.size() == 1);
    CHECK(e[0].head == 2);
}

TEST_CASE("treebank export round trip keeps every arc") {
    const auto p = sample();
    const auto text = export_treebank(p.sentences);
    const auto back = ingest_treebank_text(text);
    CHECK(back.diagnostics.empty());
    CHECK(back.sentences == p.sentences);
    CHECK(export_treebank(back.sentences) == text);

    // Space-separated input normalizes to tabs.
    const auto spaced = ingest_treebank_text("1   ὁ  l-s---mn-  2 ATR\n2 λόγος n-s---mn- 0 SBJ\n");
    CHECK(export_treebank(spaced.sentences) == "# sent_id = 1\n1\tὁ\tl-s---mn-\t2\tATR\n2\tλόγος\tn-s---mn-\t0\tSBJ\n\n");
}

TEST_CASE("rule tables") {
    CHECK(default_task_rules_tsv() == read_file(std::string(SCRIPTORIUM_FIXTURES) + "/../../tools/treebank_rules.tsv"));
    const auto rules = default_task_rules();
    CHECK(rules.size() == 8);
    for (auto t : kGrammarTasks) CHECK(parse_task(task_name(t)) == t);
    CHECK_THROWS_AS(parse_task("subject-verb"), ConfigError);
    try {
        parse_task_rules("article-noun\t*\tl.*\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field == "rules:1");
    }
    CHECK_THROWS_AS(parse_task_rules("# header\narticle-noun\t*\t(\t*\tn.*\t-\n"), ConfigError);

    // A philologist's amended table: articles attend to adjectives regardless of relation.
    const auto amended = parse_task_rules("article-adjective\t*\tl.*\t*\ta.*\t-\n");
    const auto p = sample();
    CHECK(extract_instances(p.sentences, amended).size() == 1);
}

TEST_CASE("fixed offset baseline") {
    std::vector<DependencyInstance> left;
    for (std::size_t i = 0; i < 20; ++i) left.push_back({i, i + 3, i + 4, GrammarTask::article_noun});
    const auto b = fixed_offset_baseline(left);
    CHECK(b.best_k == 1);
    CHECK(b.accuracy == 1.0);
    CHECK(fixed_offset_baseline({}).accuracy == 0.0);

    Pcg32 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<DependencyInstance> inst;
        for (std::size_t i = 0, n = 1 + rng.below(60); i < n; ++i) {
            const std::size_t dep = 10 + rng.below(30);
            inst.push_back({0, dep, dep - 12 + rng.below(25), GrammarTask::genitive_noun});
        }
        const auto r = fixed_offset_baseline(inst);
        double best = 0.0;
        for (int k = -10; k <= 10; ++k) {
            double hits = 0;
            for (const auto& x : inst) hits += static_cast<long long>(x.head) - static_cast<long long>(x.dependent) == k;
            const double acc = hits / static_cast<double>(inst.size());
            CHECK(r.per_offset[static_cast<std::size_t>(k + 10)] == doctest::Approx(acc));
            CHECK(r.accuracy >= acc);
            best = std::max(best, acc);
        }
        CHECK(r.accuracy == doctest::Approx(best));
        CHECK(r.per_offset[static_cast<std::size_t>(r.best_k + 10)] == r.accuracy);
    }
}

TEST_CASE("perfect head scores 1.0 and is found by the sweep") {
    const auto p = sample();
    const auto inst = extract_instances(p.sentences, default_task_rules());
    const auto tok = test::treebank_tokenizer(p.sentences);
    const test::ProbeBackend backend(tok, p.sentences, inst, {5, 0});
    CHECK(evaluate_head(backend, p.sentences, inst, 5, 0) == 1.0);
    const double other = evaluate_head(backend, p.sentences, inst, 3, 7);
    CHECK(other >= 0.0);
    CHECK(other <= 1.0);

    const auto reports = evaluate_all_heads(backend, p.sentences, inst, 2);
    REQUIRE(reports.size() == 8);
    for (const auto& r : reports) {
        CHECK(r.layers == 12);
        CHECK(r.heads == 12);
        CHECK(r.best_accuracy == 1.0);
        CHECK(r.accuracy[5 * 12 + 0] == 1.0);
        for (double a : r.accuracy) {
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
    }
    const auto j = nlohmann::json::parse(head_report_json(reports));
    CHECK(j.at("tasks").size() == 8);
    CHECK(j.at("tasks")[0].at("accuracy").size() == 12);
    CHECK(j.at("tasks")[0].at("baseline").at("per_offset").size() == 21);

    const auto table = render_head_table(reports);
    CHECK(table.rfind("Grammatical task", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 10);
    CHECK(table.find("μέν -> answering particle, e.g. δέ") != std::string::npos);
}

TEST_CASE("heads need an attention backend") {
    const auto p = sample();
    const auto inst = extract_instances(p.sentences, default_task_rules());
    const auto m = test::word_model({"α β γ."});
    CHECK_THROWS_AS(evaluate_head(*m.scorer, p.sentences, inst, 0, 0), CapabilityError);
}
