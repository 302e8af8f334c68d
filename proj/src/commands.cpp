#include "scriptorium/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "parallel.hpp"
#include "scriptorium/attention.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/flags.hpp"
#include "scriptorium/gaps.hpp"
#include "scriptorium/ngram.hpp"
#include "scriptorium/remote.hpp"
#include "scriptorium/simulate.hpp"

namespace scriptorium {

using json = nlohmann::ordered_json;

namespace {

class Artifacts {
public:
    explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    void write(const std::string& name, const std::string& content) {
        const auto path = dir_ / name;
        std::filesystem::create_directories(path.parent_path());
        write_file(path, content);
        names_.insert(name);
    }

    std::vector<FileDigest> digests() const {
        std::vector<FileDigest> out;
        for (const auto& n : names_) out.push_back({n, file_sha256(dir_ / n)});
        return out;
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::set<std::string> names_;
};

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
    return out;
}

std::string read_input(const std::filesystem::path& p, const char* field, std::vector<std::filesystem::path>& inputs) {
    if (p.empty()) throw ConfigError(field, "required");
    if (!std::filesystem::is_regular_file(p)) throw ConfigError(field, "cannot read " + p.string());
    inputs.push_back(p);
    return read_file(p);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::shared_ptr<const ScorerBackend> remote_backend(const RunConfig& c, Workspace& w) {
    const std::string vocab = read_input(c.scorer.vocab, "scorer.vocab", w.inputs);
    std::vector<std::string> pieces;
    for (auto& line : lines_of(vocab)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pieces.push_back(line);
    }
    auto tok = std::make_shared<WordPieceTokenizer>(pieces, kComparisonPolicy);
    w.tokenizer = tok;
    return std::make_shared<RemoteScorer>(c.scorer.url, tok, std::chrono::milliseconds(c.scorer.timeout_ms));
}

std::string paragraph_id(const std::string& doc, std::size_t k) { return doc + "#" + std::to_string(k); }

std::string cdf_tsv(const EvalSummary& s) {
    std::string out = "scheme\tpercentile\tcdf\tlower\tupper\n";
    for (const auto& r : s.schemes) {
        const auto cdf = percentile_cdf(r.ranks, s.paragraph_sizes);
        for (int step = 0; step <= 100; ++step) {
            const double x = step / 100.0;
            out += std::string(scheme_name(r.scheme)) + "\t" + fmt("%.2f", x) + "\t" + fmt("%.6f", cdf.at(x)) + "\t" +
                   fmt("%.6f", cdf.lower(x)) + "\t" + fmt("%.6f", cdf.upper(x)) + "\n";
        }
    }
    return out;
}

DetectionOptions detection_options(const RunConfig& c) {
    DetectionOptions o = c.detection.options;
    o.threads = c.run.threads;
    return o;
}

json detection_summary(const EvalSummary& s) {
    json j;
    j["instances"] = s.instances;
    j["skipped"] = s.skipped;
    for (const auto& r : s.schemes)
        j[scheme_name(r.scheme)] = {{"top1", r.top1}, {"top5", r.top5}, {"top10", r.top10}, {"recovery_rate", r.recovery_rate}};
    j["random_top1"] = s.random_top1;
    j["dkw_epsilon"] = s.dkw_epsilon;
    return j;
}

struct GapRun {
    std::vector<GapTask> tasks;
    std::vector<std::string> blind;
    std::vector<std::optional<std::string>> truth;  // hidden words
    std::vector<std::string> truth_lines;
};

GapRun generated_gaps(const Workspace& w, std::size_t n, Pcg32 rng) {
    GapRun g;
    const auto gen = generate_gap_tasks(w.held_out, rng, n);
    for (std::size_t i = 0; i < gen.tasks.size(); ++i) {
        const std::size_t d = gen.truth[i].document;
        g.blind.push_back(blind_payload(gen.tasks[i], w.held_out_title.at(d)));
        g.truth.push_back(gen.truth[i].words);
        g.truth_lines.push_back(truth_line(gen.truth[i], w.held_out_source.at(d)));
        g.tasks.push_back(gen.tasks[i]);
    }
    return g;
}

std::string jsonl(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

}  // namespace

const std::vector<std::string>& artifact_commands() {
    static const std::vector<std::string> names{"flag", "fill", "simulate-errors", "simulate-gaps", "eval",
                                                "attn-eval", "make-corpus", "eval-scorer"};
    return names;
}

Workspace open_workspace(const RunConfig& c, bool force_synthetic) {
    Workspace w;
    const bool synthetic = force_synthetic || c.corpus.source == "synthetic";
    std::shared_ptr<const ScorerBackend> ngram;
    if (synthetic) {
        auto setup = make_synthetic_setup(c.synthetic);
        w.tokenizer = setup.tokenizer;
        ngram = setup.scorer;
        w.training = std::move(setup.training);
        w.held_out = std::move(setup.paragraphs);
        for (std::size_t i = 0; i < w.held_out.size(); ++i) {
            w.held_out_source.push_back("synthetic#" + std::to_string(i));
            w.held_out_title.push_back("Synthetic corpus");
            w.documents.push_back({w.held_out_source.back(), w.held_out_title.back(), w.held_out[i].normalized});
        }
        w.dictionary = std::move(setup.dictionary);
    } else {
        read_input(c.corpus.manifest, "corpus.manifest", w.inputs);
        std::vector<ManifestEntry> entries;
        std::vector<Document> docs;
        try {
            entries = read_manifest(c.corpus.manifest);
            for (const auto& e : entries) w.inputs.push_back((c.corpus.manifest.parent_path() / e.path).lexically_normal());
            docs = load_corpus(c.corpus.manifest, kComparisonPolicy);
        } catch (const IngestionError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("corpus.manifest", e.what());
        }
        if (docs.empty()) throw ConfigError("corpus.manifest", "no documents");
        const bool all = c.flags.target == "all";
        const CorpusSplit split = split_corpus(docs.size(), c.corpus.test_fraction, c.run.seed);
        std::vector<std::size_t> train_ids = split.train;
        std::vector<std::size_t> targets = split.test;
        if (all) {
            train_ids.resize(docs.size());
            for (std::size_t i = 0; i < docs.size(); ++i) train_ids[i] = i;
            targets = train_ids;
        }
        for (auto i : train_ids) w.training.push_back(docs[i].text);
        for (auto i : targets) {
            const auto paragraphs = split_paragraphs(docs[i].text, c.corpus.paragraph_words);
            for (std::size_t k = 0; k < paragraphs.size(); ++k) {
                w.held_out.push_back(paragraphs[k]);
                w.held_out_source.push_back(docs[i].id);
                w.held_out_title.push_back(docs[i].work);
            }
        }
        for (const auto& d : docs) w.documents.push_back({d.id, d.work, d.text.normalized});
        if (c.scorer.backend == "ngram") {
            std::vector<NormalizedText> all_texts;
            for (const auto& d : docs) all_texts.push_back(d.text);
            auto tok = std::make_shared<WordTokenizer>(WordTokenizer::build(all_texts));
            w.tokenizer = tok;
            std::vector<Tokenization> tokenized;
            for (const auto& t : w.training) tokenized.push_back(tok->tokenize(t));
            ngram = std::make_shared<NgramScorer>(tok, tokenized, c.scorer.ngram);
        }
        w.dictionary = build_dictionary(w.training);
    }
    if (c.scorer.backend == "remote")
        w.backend = remote_backend(c, w);
    else
        w.backend = ngram;
    return w;
}

Invocation invocation_from_file(std::string command, const std::filesystem::path& config,
                                std::vector<std::pair<std::string, std::string>> overrides) {
    Invocation inv;
    inv.command = std::move(command);
    try {
        inv.config_text = read_file(config);
    } catch (const std::exception& e) {
        throw ConfigError("config", e.what());
    }
    inv.config_dir = std::filesystem::absolute(config).parent_path();
    inv.overrides = std::move(overrides);
    return inv;
}

RunResult run_command(const Invocation& inv) {
    const auto& known = artifact_commands();
    if (std::find(known.begin(), known.end(), inv.command) == known.end()) throw ConfigError("command", "unknown command " + inv.command);
    const RunConfig c = parse_config(inv.config_text, inv.config_dir, inv.overrides);

    RunManifest m;
    m.command = inv.command;
    m.config_text = inv.config_text;
    m.config_dir = inv.config_dir.string();
    m.overrides = inv.overrides;
    m.started = utc_timestamp();
    m.seeds = {{"run", c.run.seed},
               {"synthetic", c.synthetic.seed},
               {"language", c.synthetic.language.seed},
               {"detection", c.detection.options.seed},
               {"gaps", c.gaps.seed},
               {"train", c.gaps.train.seed}};

    json summary;
    std::vector<std::filesystem::path> inputs;
    std::function<void(Artifacts&)> produce;
    std::string model_id;

    const std::string& cmd = inv.command;
    if (cmd == "attn-eval") {
        if (c.scorer.backend == "ngram") throw CapabilityError("the n-gram backend exports no attention; use scorer.backend = remote");
        Workspace w;
        w.backend = remote_backend(c, w);
        inputs = w.inputs;
        if (!w.backend->supports_attention()) throw CapabilityError("backend " + w.backend->model_id() + " exports no attention");
        const auto tb = ingest_treebank_text(read_input(c.attention.treebank, "attention.treebank", inputs));
        std::vector<TaskRule> rules;
        if (c.attention.rules.empty()) {
            rules = default_task_rules();
        } else {
            try {
                rules = parse_task_rules(read_input(c.attention.rules, "attention.rules", inputs));
            } catch (const ConfigError& e) {
                throw ConfigError("attention.rules", e.what());
            }
        }
        std::vector<std::string> diagnostics = tb.diagnostics;
        const auto instances = extract_instances(tb.sentences, rules, &diagnostics);
        const auto reports = evaluate_all_heads(*w.backend, tb.sentences, instances, c.run.threads);
        model_id = w.backend->model_id();
        summary["sentences"] = tb.sentences.size();
        summary["instances"] = instances.size();
        summary["diagnostics"] = diagnostics.size();
        produce = [reports, diagnostics](Artifacts& a) {
            a.write("heads.json", head_report_json(reports) + "\n");
            a.write("heads.txt", render_head_table(reports));
            std::string d;
            for (const auto& s : diagnostics) d += s + "\n";
            a.write("diagnostics.txt", d);
        };
    } else {
        const bool synthetic = cmd == "simulate-errors" || cmd == "simulate-gaps" || cmd == "make-corpus";
        RunConfig cc = c;
        if (cmd != "flag") cc.flags.target = "test";
        auto w = std::make_shared<Workspace>(open_workspace(cc, synthetic));
        inputs = w->inputs;
        model_id = w->backend->model_id();

        if (cmd == "flag") {
            const NeighborhoodIndex index(w->dictionary, 1, c.costs);
            FlagOptions fo;
            fo.k = c.flags.k;
            fo.max_suggestions = c.flags.max_suggestions;
            fo.global_beam = c.flags.global_beam;
            const ThresholdScheme scheme = ThresholdScheme::named(c.flags.scheme);
            std::vector<std::vector<FlagRecord>> kept(w->held_out.size());
            detail::parallel_for(w->held_out.size(), c.run.threads, [&](std::size_t p) {
                kept[p] = apply_thresholds(compute_flags(*w->backend, w->held_out[p], index, fo), scheme);
            });
            std::vector<std::string> lines;
            std::map<std::string, std::size_t> counter;
            std::size_t words = 0;
            for (std::size_t p = 0; p < w->held_out.size(); ++p) {
                const auto& text = w->held_out[p];
                words += text.word_count();
                const std::string doc = paragraph_id(w->held_out_source[p], counter[w->held_out_source[p]]++);
                for (const auto& r : kept[p]) {
                    const std::size_t a = r.word_index >= 5 ? r.word_index - 5 : 0;
                    const std::size_t b = std::min(text.word_count(), r.word_index + 6) - 1;
                    lines.push_back(flag_report_line(r, doc, text.word_spans[a].start, text.word_spans[b].end));
                }
            }
            summary["paragraphs"] = w->held_out.size();
            summary["words"] = words;
            summary["flagged"] = lines.size();
            summary["scheme"] = scheme.name;
            produce = [lines](Artifacts& a) { a.write("flags.jsonl", jsonl(lines)); };
        } else if (cmd == "eval" || cmd == "simulate-errors") {
            const EvalSummary s = evaluate_detection(*w->backend, w->held_out, w->dictionary, detection_options(c));
            summary = detection_summary(s);
            std::optional<HypothesisSamples> h;
            if (cmd == "simulate-errors" && c.detection.h0 + c.detection.h1 > 0)
                h = hypothesis_histograms(*w->backend, w->held_out, w->dictionary, c.detection.metric, c.detection.h0,
                                          c.detection.h1, c.detection.options.seed ^ 0x4e0, c.detection.options.k);
            produce = [s, h](Artifacts& a) {
                a.write("summary.json", summary_json(s) + "\n");
                a.write("table.txt", render_accuracy_table(s));
                a.write("cdf.tsv", cdf_tsv(s));
                if (h) a.write("hypotheses.tsv", write_hypothesis_tsv(*h));
            };
        } else if (cmd == "simulate-gaps") {
            const GapRun g = generated_gaps(*w, c.gaps.tasks, Pcg32::fork(c.gaps.seed, 2));
            summary["tasks"] = g.tasks.size();
            produce = [g](Artifacts& a) {
                a.write("blind.jsonl", jsonl(g.blind));
                a.write("truth.jsonl", jsonl(g.truth_lines));
            };
        } else if (cmd == "fill") {
            Pcg32 train_rng = Pcg32::fork(c.gaps.seed, 1);
            const auto train = generate_gap_tasks(w->training, train_rng, c.gaps.train_tasks);
            const auto examples = gap_training_examples(*w->backend, train.tasks, c.gaps.options, c.run.threads);
            const TrainResult trained = train_tokcount_net(examples, c.gaps.train);

            GapRun g;
            if (!c.gaps.tasks_file.empty()) {
                for (const auto& line : lines_of(read_input(c.gaps.tasks_file, "gaps.tasks_file", inputs))) {
                    g.tasks.push_back(task_from_blind_payload(line, w->tokenizer->policy()));
                    g.blind.push_back(line);
                }
                std::map<std::string, std::string> truth;
                if (!c.gaps.truth_file.empty())
                    for (const auto& line : lines_of(read_input(c.gaps.truth_file, "gaps.truth_file", inputs))) {
                        const GapTruth t = parse_truth_line(line);
                        truth[t.id] = t.words;
                    }
                for (const auto& t : g.tasks) {
                    const auto it = truth.find(t.id);
                    g.truth.push_back(it == truth.end() ? std::nullopt : std::optional<std::string>(it->second));
                }
            } else {
                g = generated_gaps(*w, c.gaps.tasks, Pcg32::fork(c.gaps.seed, 2));
                // The model only ever sees the blind payload.
                for (std::size_t i = 0; i < g.tasks.size(); ++i) g.tasks[i] = task_from_blind_payload(g.blind[i], w->tokenizer->policy());
            }
            std::vector<GapPrediction> predictions(g.tasks.size());
            detail::parallel_for(g.tasks.size(), c.run.threads, [&](std::size_t i) {
                predictions[i] = predict_gap(analyze_gap(*w->backend, g.tasks[i], c.gaps.options), trained.net, g.tasks[i]);
            });
            std::vector<std::string> lines;
            std::size_t scored = 0, top1 = 0, top2 = 0, top10 = 0, mismatches = 0;
            for (std::size_t i = 0; i < predictions.size(); ++i) {
                lines.push_back(gap_report_line(predictions[i], std::nullopt));
                for (const auto& s : predictions[i].spans) mismatches += count_letters(s.text) != g.tasks[i].n_chars;
                if (!g.truth[i]) continue;
                ++scored;
                const std::string truth = canonical_fill(*g.truth[i], w->tokenizer->policy());
                std::size_t rank = 0;
                for (std::size_t k = 0; k < predictions[i].spans.size() && !rank; ++k)
                    if (canonical_fill(predictions[i].spans[k].text, w->tokenizer->policy()) == truth) rank = k + 1;
                top1 += rank == 1;
                top2 += rank >= 1 && rank <= 2;
                top10 += rank >= 1 && rank <= 10;
            }
            auto acc = [scored](std::size_t h) { return scored ? static_cast<double>(h) / static_cast<double>(scored) : 0.0; };
            json gs;
            gs["tasks"] = g.tasks.size();
            gs["train_examples"] = examples.size();
            gs["train_accuracy"] = trained.accuracy;
            gs["scored"] = scored;
            gs["top1"] = acc(top1);
            gs["top2"] = acc(top2);
            gs["top10"] = acc(top10);
            gs["length_mismatches"] = mismatches;
            summary = gs;
            const std::string net = trained.net.serialize();
            const bool generated = c.gaps.tasks_file.empty();
            produce = [lines, gs, net, g, generated](Artifacts& a) {
                a.write("predictions.jsonl", jsonl(lines));
                a.write("gap_summary.json", gs.dump(2) + "\n");
                a.write("tokcount.bin", net);
                if (generated) {
                    a.write("blind.jsonl", jsonl(g.blind));
                    a.write("truth.jsonl", jsonl(g.truth_lines));
                }
            };
        } else if (cmd == "make-corpus") {
            auto setup = make_synthetic_setup(c.synthetic);
            std::vector<std::string> texts(c.synthetic_documents);
            detail::parallel_for(texts.size(), c.run.threads, [&](std::size_t i) {
                Pcg32 rng = Pcg32::fork(c.synthetic.seed ^ 0xd0c, i);
                texts[i] = sample_from_model(*setup.generator, rng, c.synthetic_document_words);
            });
            summary["documents"] = texts.size();
            produce = [texts](Artifacts& a) {
                std::string manifest = "# synthetic corpus\n";
                for (std::size_t i = 0; i < texts.size(); ++i) {
                    char name[32];
                    std::snprintf(name, sizeof name, "doc-%02zu.txt", i);
                    a.write(std::string("corpus/") + name, texts[i] + "\n");
                    char work[32];
                    std::snprintf(work, sizeof work, "work-%02zu", i);
                    manifest += std::string(name) + "\tsynthetic\t" + work + "\n";
                }
                a.write("corpus/manifest.tsv", manifest);
            };
        } else if (cmd == "eval-scorer") {
            std::vector<Tokenization> test;
            for (const auto& p : w->held_out) test.push_back(w->tokenizer->tokenize(p));
            const ScorerMetrics sm = eval_scorer(*w->backend, test);
            summary["positions"] = sm.positions;
            summary["top1"] = sm.top1_accuracy;
            summary["top5"] = sm.top5_accuracy;
            summary["pseudo_perplexity"] = sm.pseudo_perplexity;
            const std::string body = summary.dump(2) + "\n";
            produce = [body](Artifacts& a) { a.write("scorer.json", body); };
        }
    }

    std::sort(inputs.begin(), inputs.end());
    inputs.erase(std::unique(inputs.begin(), inputs.end()), inputs.end());
    for (const auto& p : inputs) m.inputs.push_back({std::filesystem::absolute(p).lexically_normal().string(), file_sha256(p)});
    m.model_id = model_id;
    m.run_id = m.compute_run_id();

    const std::filesystem::path dir = inv.out.empty() ? c.run.out_dir / (cmd + "-" + m.run_id) : inv.out;
    Artifacts a(dir);
    produce(a);
    m.outputs = a.digests();
    m.finished = utc_timestamp();
    write_file(dir / "manifest.json", manifest_json(m));

    json line;
    line["command"] = cmd;
    line["run_id"] = m.run_id;
    line["dir"] = dir.string();
    line["model_id"] = model_id;
    line["summary"] = summary;
    return {dir, m, line.dump()};
}

ReplayResult replay_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out) {
    std::string text;
    try {
        text = read_file(manifest);
    } catch (const std::exception& e) {
        throw ConfigError("manifest", e.what());
    }
    const RunManifest m = parse_manifest_json(text);
    for (const auto& in : m.inputs) {
        if (!std::filesystem::is_regular_file(in.path)) throw IngestionError("recorded input is missing: " + in.path, 0);
        if (file_sha256(in.path) != in.sha256) throw IngestionError("recorded input changed: " + in.path, 0);
    }
    Invocation inv;
    inv.command = m.command;
    inv.config_text = m.config_text;
    inv.config_dir = m.config_dir;
    inv.overrides = m.overrides;
    inv.out = out;
    if (inv.out.empty()) {
        const auto base = std::filesystem::absolute(manifest).parent_path();
        for (int i = 1;; ++i) {
            inv.out = base.parent_path() / (base.filename().string() + "-replay-" + std::to_string(i));
            if (!std::filesystem::exists(inv.out)) break;
        }
    }
    ReplayResult r;
    r.rerun = run_command(inv);
    std::map<std::string, std::string> recorded, replayed;
    for (const auto& d : m.outputs) recorded[d.path] = d.sha256;
    for (const auto& d : r.rerun.manifest.outputs) replayed[d.path] = d.sha256;
    for (const auto& [p, h] : recorded) {
        const auto it = replayed.find(p);
        if (it == replayed.end())
            r.mismatches.push_back(p + ": not produced");
        else if (it->second != h)
            r.mismatches.push_back(p + ": " + h + " != " + it->second);
    }
    for (const auto& [p, h] : replayed)
        if (!recorded.count(p)) r.mismatches.push_back(p + ": not recorded");
    if (m.model_id != r.rerun.manifest.model_id) r.mismatches.push_back("model_id: " + m.model_id + " != " + r.rerun.manifest.model_id);
    r.identical = r.mismatches.empty();
    return r;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 3;
    if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const CapabilityError*>(&e)) return 2;
    return 1;
}

std::string error_json(const std::exception& e) {
    json j;
    const char* kind = "error";
    if (dynamic_cast<const ConfigError*>(&e)) kind = "config";
    else if (dynamic_cast<const TransportError*>(&e)) kind = "backend_unreachable";
    else if (dynamic_cast<const CapabilityError*>(&e)) kind = "backend_capability";
    else if (dynamic_cast<const IngestionError*>(&e)) kind = "ingestion";
    else if (dynamic_cast<const TruncationError*>(&e)) kind = "truncation";
    j["error"] = kind;
    j["message"] = e.what();
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) j["field"] = ce->field;
    j["exit_code"] = exit_code_for(e);
    return j.dump();
}

}  // namespace scriptorium
