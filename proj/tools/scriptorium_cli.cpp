// scriptorium: command-line front end. Every artifact command writes its
// reports plus manifest.json into one run directory and prints a JSON line.
#include <cstdio>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"
#include "scriptorium/commands.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/remote.hpp"
#include "scriptorium/review.hpp"
#include "httplib.h"

using namespace scriptorium;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::vector<std::string> set;
    std::vector<std::pair<std::string, std::string>> overrides;

    void add_to(CLI::App* app) {
        app->add_option("-c,--config", config, "INI run configuration")->check(CLI::ExistingFile);
        app->add_option("-o,--out", out, "run directory (default <run.out_dir>/<command>-<run_id>)");
        app->add_option("--set", set, "override a config key, section.key=value (repeatable)");
    }

    void option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help, bool is_path = false) {
        app->add_option_function<std::string>(
            flag,
            [this, key, is_path](const std::string& v) {
                overrides.emplace_back(key, is_path ? fs::absolute(v).lexically_normal().string() : v);
            },
            help);
    }

    Invocation invocation(const std::string& command) const {
        std::vector<std::pair<std::string, std::string>> all;
        for (const auto& s : set) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(s, "--set needs section.key=value");
            all.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        all.insert(all.end(), overrides.begin(), overrides.end());
        Invocation inv;
        if (config.empty()) {
            inv.command = command;
            inv.config_dir = fs::current_path();
            inv.overrides = std::move(all);
        } else {
            inv = invocation_from_file(command, config, std::move(all));
        }
        if (!out.empty()) inv.out = fs::absolute(out);
        return inv;
    }
};

std::string random_token() {
    std::random_device rd;
    char buf[33];
    std::snprintf(buf, sizeof buf, "%08x%08x%08x%08x", rd(), rd(), rd(), rd());
    return buf;
}

int serve(const Invocation& inv) {
    const RunConfig c = parse_config(inv.config_text, inv.config_dir, inv.overrides);
    const Workspace w = open_workspace(c);
    httplib::Server server;
    mount_scorer_routes(server, w.backend);

    std::vector<ReviewTask> tasks;
    if (!c.review.tasks.empty()) {
        if (c.review.truth.empty()) throw ConfigError("review.truth", "required when review.tasks is set");
        if (c.review.predictions.empty()) throw ConfigError("review.predictions", "required when review.tasks is set");
        tasks = load_review_tasks(read_file(c.review.tasks), read_file(c.review.truth), read_file(c.review.predictions));
    }
    ReviewOptions ro;
    ro.log_dir = c.review.log_dir;
    ro.token = c.review.token.empty() ? random_token() : c.review.token;
    ro.policy = w.tokenizer->policy();
    ro.snapshot_every = c.review.snapshot_every;
    const std::size_t n_tasks = tasks.size();
    auto review = std::make_shared<ReviewService>(std::move(tasks), w.documents, ro);
    mount_review_routes(server, review);

    if (!server.bind_to_port(c.review.host, c.review.port)) throw std::runtime_error("cannot bind " + c.review.host + ":" + std::to_string(c.review.port));
    nlohmann::json hello{{"listening", "http://" + c.review.host + ":" + std::to_string(c.review.port)},
                         {"model_id", w.backend->model_id()},
                         {"review_tasks", n_tasks},
                         {"token", ro.token}};
    std::cout << hello.dump() << std::endl;
    server.listen_after_bind();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scribal error detection and gap filling over a masked language model"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "scriptorium 0.1.0");

    std::map<std::string, Common> common;
    std::map<std::string, CLI::App*> sub;
    auto add = [&](const std::string& name, const std::string& help) {
        auto* s = app.add_subcommand(name, help);
        common[name].add_to(s);
        sub[name] = s;
        return s;
    };
    {
        auto* s = add("flag", "flag likely scribal errors in the held-out paragraphs");
        common["flag"].option(s, "--scheme", "flags.scheme", "paper-default | high-precision | high-recall");
        common["flag"].option(s, "--k", "flags.k", "neighborhood radius");
        common["flag"].option(s, "--target", "flags.target", "test | all");
    }
    for (const char* name : {"eval", "simulate-errors"}) {
        auto* s = add(name, std::string(name) == "eval" ? "artificial-corruption detection on the corpus test split"
                                                        : "artificial-corruption detection on a synthetic corpus");
        common[name].option(s, "--scheme", "detection.schemes", "ranking scheme(s): rho chance confidence");
        common[name].option(s, "--instances", "detection.instances", "number of corruption instances");
    }
    {
        auto* s = add("simulate-gaps", "generate blind gap tasks and their ground truth");
        common["simulate-gaps"].option(s, "--tasks", "gaps.tasks", "number of gaps");
    }
    {
        auto* s = add("fill", "train the token-count net and rank fills for gap tasks");
        common["fill"].option(s, "--tasks", "gaps.tasks_file", "blind.jsonl (default: generate)", true);
        common["fill"].option(s, "--truth", "gaps.truth_file", "truth.jsonl for scoring", true);
    }
    {
        auto* s = add("attn-eval", "per-head dependency accuracy from exported attention");
        common["attn-eval"].option(s, "--treebank", "attention.treebank", "treebank TSV", true);
        common["attn-eval"].option(s, "--rules", "attention.rules", "task rule table TSV", true);
    }
    add("make-corpus", "write a synthetic corpus with a manifest");
    add("eval-scorer", "masked-token accuracy and pseudo-perplexity on the test split");
    {
        auto* s = add("serve", "scorer endpoints plus the blind review API");
        common["serve"].option(s, "--port", "review.port", "port");
        common["serve"].option(s, "--host", "review.host", "host");
        common["serve"].option(s, "--token", "review.token", "session token (random when unset)");
    }
    std::string manifest;
    std::string replay_out;
    auto* replay = app.add_subcommand("replay", "re-run a manifest and compare artifact digests");
    replay->add_option("manifest", manifest, "manifest.json of a run")->required();
    replay->add_option("-o,--out", replay_out, "directory for the re-run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}, {"exit_code", 3}}.dump() << "\n";
        return 3;
    }

    try {
        if (replay->parsed()) {
            const ReplayResult r = replay_manifest(manifest, replay_out.empty() ? fs::path{} : fs::absolute(replay_out));
            nlohmann::json j{{"identical", r.identical}, {"run_id", r.rerun.manifest.run_id}, {"dir", r.rerun.dir.string()},
                             {"mismatches", r.mismatches}};
            std::cout << j.dump() << std::endl;
            return r.identical ? 0 : 1;
        }
        for (auto& [name, s] : sub) {
            if (!s->parsed()) continue;
            const Invocation inv = common[name].invocation(name);
            if (name == "serve") return serve(inv);
            std::cout << run_command(inv).summary << std::endl;
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << error_json(e) << "\n";
        return exit_code_for(e);
    }
    return 1;
}
