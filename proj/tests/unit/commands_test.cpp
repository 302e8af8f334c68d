#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "probe_backend.hpp"
#include "scriptorium/commands.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/remote.hpp"
#include "server_fixture.hpp"

using namespace scriptorium;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    std::random_device rd;
    const auto p = fs::temp_directory_path() / ("scriptorium-" + tag + "-" + std::to_string(rd()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const std::string kSynthetic = R"([synthetic]
base_words = 400
seed_words = 40000
train_words = 60000
paragraphs = 30
paragraph_words = 120

[detection]
instances = 30
h0 = 60
h1 = 12

[gaps]
tasks = 10
train_tasks = 60
epochs = 10
beam_width = 8
)";

Invocation inv(const std::string& command, const std::string& config, const fs::path& dir,
               std::vector<std::pair<std::string, std::string>> overrides = {}) {
    Invocation i;
    i.command = command;
    i.config_text = config;
    i.config_dir = dir;
    i.overrides = std::move(overrides);
    return i;
}

std::string corpus_config() {
    return "[corpus]\nmanifest = " + std::string(SCRIPTORIUM_FIXTURES) +
           "/corpus/manifest.tsv\ntest_fraction = 0.34\n\n[detection]\ninstances = 40\n";
}

}  // namespace

TEST_CASE("sha256") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const auto dir = fresh_dir("sha");
    write_file(dir / "x", "abc");
    CHECK(file_sha256(dir / "x") == sha256_hex("abc"));
    CHECK_THROWS_AS(file_sha256(dir / "missing"), IngestionError);
    fs::remove_all(dir);
}

TEST_CASE("manifest json round trip and run id") {
    RunManifest m;
    m.command = "eval";
    m.config_text = "[run]\nseed = 3\n";
    m.config_dir = "/cfg";
    m.overrides = {{"detection.instances", "5"}};
    m.seeds = {{"run", 3}};
    m.inputs = {{"/data/a.txt", sha256_hex("a")}};
    m.outputs = {{"summary.json", sha256_hex("s")}};
    m.model_id = "ngram3-0";
    m.started = "2026-01-01T00:00:00Z";
    m.run_id = m.compute_run_id();
    const RunManifest back = parse_manifest_json(manifest_json(m));
    CHECK(back.run_id == m.run_id);
    CHECK(back.overrides == m.overrides);
    CHECK(back.seeds == m.seeds);
    CHECK(back.inputs == m.inputs);
    CHECK(back.outputs == m.outputs);
    CHECK(back.config_text == m.config_text);

    RunManifest later = m;
    later.started = "2027-01-01T00:00:00Z";
    later.outputs.clear();
    CHECK(later.compute_run_id() == m.run_id);
    RunManifest other = m;
    other.overrides[0].second = "6";
    CHECK(other.compute_run_id() != m.run_id);
    CHECK_THROWS_AS(parse_manifest_json("{}"), IngestionError);
}

TEST_CASE("eval on the fixture corpus replays byte for byte") {
    const auto dir = fresh_dir("eval");
    Invocation i = inv("eval", corpus_config(), dir, {{"detection.schemes", "rho chance"}});
    i.out = dir / "run";
    const RunResult r = run_command(i);
    CHECK(fs::exists(dir / "run" / "summary.json"));
    CHECK(fs::exists(dir / "run" / "table.txt"));
    CHECK(fs::exists(dir / "run" / "manifest.json"));
    REQUIRE(r.manifest.outputs.size() == 3);
    CHECK(r.manifest.inputs.size() == 7);  // manifest plus six documents
    const auto s = json::parse(read_file(dir / "run" / "summary.json"));
    CHECK(s.at("instances").get<int>() + s.at("skipped").get<int>() == 40);
    const auto line = json::parse(r.summary);
    CHECK(line.at("summary").at("rho").at("top1").get<double>() > line.at("summary").at("chance").at("top1").get<double>());

    const ReplayResult rep = replay_manifest(dir / "run" / "manifest.json", dir / "again");
    CHECK(rep.identical);
    CHECK(rep.mismatches.empty());
    CHECK(rep.rerun.manifest.run_id == r.manifest.run_id);
    CHECK(read_file(dir / "again" / "table.txt") == read_file(dir / "run" / "table.txt"));
    fs::remove_all(dir);
}

TEST_CASE("replay refuses changed inputs") {
    const auto dir = fresh_dir("changed");
    fs::copy(std::string(SCRIPTORIUM_FIXTURES) + "/corpus", dir / "corpus");
    Invocation i = inv("eval", "[corpus]\nmanifest = corpus/manifest.tsv\ntest_fraction = 0.34\n[detection]\ninstances = 10\n", dir);
    i.out = dir / "run";
    run_command(i);
    write_file(dir / "corpus" / "doc-00.txt", read_file(dir / "corpus" / "doc-00.txt") + " αα");
    CHECK_THROWS_AS(replay_manifest(dir / "run" / "manifest.json", dir / "again"), IngestionError);
    fs::remove_all(dir);
}

TEST_CASE("synthetic commands replay") {
    const auto dir = fresh_dir("synthetic");
    for (const char* cmd : {"simulate-errors", "simulate-gaps", "fill", "make-corpus"}) {
        CAPTURE(cmd);
        Invocation i = inv(cmd, kSynthetic, dir, {{"corpus.source", "synthetic"}});
        i.out = dir / cmd;
        const RunResult r = run_command(i);
        CHECK_FALSE(r.manifest.outputs.empty());
        const ReplayResult rep = replay_manifest(dir / cmd / "manifest.json", dir / (std::string(cmd) + "-again"));
        CHECK(rep.identical);
    }
    const auto h = read_hypothesis_tsv(read_file(dir / "simulate-errors" / "hypotheses.tsv"));
    CHECK(h.h0.size() == 60);
    const auto gs = json::parse(read_file(dir / "fill" / "gap_summary.json"));
    CHECK(gs.at("tasks") == 10);
    CHECK(gs.at("length_mismatches") == 0);
    CHECK(gs.at("top1").get<double>() <= gs.at("top10").get<double>());

    // fill reads blind tasks written by simulate-gaps and scores them against the truth file.
    Invocation f = inv("fill", kSynthetic, dir,
                       {{"corpus.source", "synthetic"},
                        {"gaps.tasks_file", (dir / "simulate-gaps" / "blind.jsonl").string()},
                        {"gaps.truth_file", (dir / "simulate-gaps" / "truth.jsonl").string()}});
    f.out = dir / "fill-files";
    const RunResult fr = run_command(f);
    CHECK(json::parse(fr.summary).at("summary").at("scored") == 10);
    CHECK(fr.manifest.inputs.size() == 2);
    CHECK(read_file(dir / "fill-files" / "predictions.jsonl") == read_file(dir / "fill" / "predictions.jsonl"));
    fs::remove_all(dir);
}

TEST_CASE("flag writes thresholded records") {
    const auto dir = fresh_dir("flag");
    Invocation i = inv("flag", corpus_config(), dir, {{"flags.scheme", "paper-default"}});
    i.out = dir / "run";
    const RunResult r = run_command(i);
    const std::string flags = read_file(dir / "run" / "flags.jsonl");
    std::size_t n = 0;
    std::istringstream in(flags);
    for (std::string line; std::getline(in, line); ++n) {
        const auto e = parse_flag_report_line(line);
        CHECK(e.record.confidence_global >= 0.5);
        CHECK(e.record.scribal_dist_global <= 3.0);
    }
    CHECK(json::parse(r.summary).at("summary").at("flagged") == n);
    CHECK(replay_manifest(dir / "run" / "manifest.json", dir / "again").identical);
    fs::remove_all(dir);
}

TEST_CASE("command errors map to exit codes") {
    const auto dir = fresh_dir("errors");
    auto code = [&](const Invocation& i) {
        try {
            run_command(i);
        } catch (const std::exception& e) {
            const auto j = json::parse(error_json(e));
            CHECK(j.at("exit_code") == exit_code_for(e));
            return exit_code_for(e);
        }
        return 0;
    };
    CHECK(code(inv("bogus", "", dir)) == 3);
    CHECK(code(inv("eval", "[run]\nseeed = 1\n", dir)) == 3);
    CHECK(code(inv("eval", "", dir)) == 3);  // no corpus manifest
    CHECK(code(inv("eval", "[corpus]\nmanifest = nowhere.tsv\n", dir)) == 3);
    CHECK(code(inv("attn-eval", "", dir)) == 2);
    write_file(dir / "vocab.txt", "α\nβ\n");
    CHECK(code(inv("eval-scorer", corpus_config(), dir,
                   {{"scorer.backend", "remote"}, {"scorer.url", "http://127.0.0.1:9"}, {"scorer.vocab", "vocab.txt"}})) == 2);
    try {
        run_command(inv("eval", "[detection]\ninstances = none\n", dir));
    } catch (const ConfigError& e) {
        CHECK(e.field == "detection.instances");
        CHECK(json::parse(error_json(e)).at("field") == "detection.instances");
    }
    fs::remove_all(dir);
}

TEST_CASE("attn-eval through a remote scorer") {
    const auto dir = fresh_dir("attn");
    const std::string treebank = std::string(SCRIPTORIUM_FIXTURES) + "/treebank/sample.tsv";
    const auto tb = ingest_treebank_text(read_file(treebank));
    const auto instances = extract_instances(tb.sentences, default_task_rules());
    const auto tok = test::treebank_tokenizer(tb.sentences);
    auto backend = std::make_shared<test::ProbeBackend>(tok, tb.sentences, instances, std::pair<std::size_t, std::size_t>{3, 7});
    test::LocalServer s;
    mount_scorer_routes(s.server, backend);
    s.start();

    std::string vocab;
    for (std::size_t id = Vocabulary::kFirstPredictable + 1; id < tok->vocab().size(); ++id)
        vocab += tok->vocab().piece(static_cast<TokenId>(id)) + "\n";
    write_file(dir / "vocab.txt", vocab);
    const std::string config = "[scorer]\nbackend = remote\nurl = " + s.url() + "\nvocab = vocab.txt\n\n[attention]\ntreebank = " + treebank + "\n";
    Invocation i = inv("attn-eval", config, dir);
    i.out = dir / "run";
    const RunResult r = run_command(i);
    CHECK(r.manifest.model_id == "probe");
    const auto heads = json::parse(read_file(dir / "run" / "heads.json"));
    REQUIRE(heads.at("tasks").size() == 8);
    // with one or two instances per task a random head can tie, so check the planted cell
    for (const auto& t : heads.at("tasks")) {
        CHECK(t.at("accuracy")[3][7] == 1.0);
        CHECK(t.at("best_head").at("accuracy") == 1.0);
    }
    CHECK(replay_manifest(dir / "run" / "manifest.json", dir / "again").identical);
    fs::remove_all(dir);
}
