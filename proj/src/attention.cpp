#include "scriptorium/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "parallel.hpp"
#include "scriptorium/errors.hpp"

namespace scriptorium {

AttentionTensor word_level_attention(const AttentionTensor& t, const TokenAlignment& a) {
    if (a.token_word.size() != t.size)
        throw std::invalid_argument("alignment covers " + std::to_string(a.token_word.size()) + " tokens, tensor has " +
                                    std::to_string(t.size));
    std::vector<std::size_t> tokens_per_word(a.words, 0);
    for (auto w : a.token_word) {
        if (w == kSpecialToken) continue;
        if (w >= a.words) throw std::invalid_argument("alignment names a word past the end");
        ++tokens_per_word[w];
    }
    for (std::size_t w = 0; w < a.words; ++w)
        if (tokens_per_word[w] == 0) throw std::invalid_argument("word " + std::to_string(w) + " has no token");

    AttentionTensor out(t.layers, t.heads, a.words);
    std::vector<double> row(a.words);
    for (std::size_t l = 0; l < t.layers; ++l) {
        for (std::size_t h = 0; h < t.heads; ++h) {
            for (std::size_t i = 0; i < t.size; ++i) {
                const std::size_t from = a.token_word[i];
                if (from == kSpecialToken) continue;
                std::fill(row.begin(), row.end(), 0.0);
                double mass = 0.0;
                for (std::size_t j = 0; j < t.size; ++j) {
                    if (a.token_word[j] == kSpecialToken) continue;
                    row[a.token_word[j]] += t.at(l, h, i, j);
                    mass += t.at(l, h, i, j);
                }
                if (!(mass > 0.0)) throw std::invalid_argument("token row has no attention outside special tokens");
                const double scale = 1.0 / (mass * static_cast<double>(tokens_per_word[from]));
                for (std::size_t w = 0; w < a.words; ++w) out.at(l, h, from, w) += row[w] * scale;
            }
        }
    }
    return out;
}

std::size_t attends_most(std::span<const double> row) {
    if (row.empty()) throw std::invalid_argument("empty attention row");
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::size_t attends_most(const AttentionTensor& words, std::size_t layer, std::size_t head, std::size_t from) {
    if (layer >= words.layers || head >= words.heads || from >= words.size) throw std::out_of_range("attention index");
    return attends_most(std::span(words.weights).subspan(words.offset(layer, head, from, 0), words.size));
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        if (i == line.size()) break;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

bool parse_index(const std::string& s, std::size_t& out) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9) return false;
    out = static_cast<std::size_t>(std::stoul(s));
    return true;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TreebankParse ingest_treebank(std::istream& in) {
    TreebankParse out;
    TreebankSentence current;
    std::string pending_id;
    std::size_t line_no = 0;
    auto flush = [&] {
        if (!current.words.empty()) {
            current.id = pending_id.empty() ? std::to_string(out.sentences.size() + 1) : pending_id;
            out.sentences.push_back(std::move(current));
        }
        current = {};
        pending_id.clear();
    };
    auto diag = [&](const std::string& msg) { out.diagnostics.push_back("line " + std::to_string(line_no) + ": " + msg); };

    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) {
            flush();
            continue;
        }
        if (t[0] == '#') {
            const auto eq = t.find('=');
            if (t.find("sent_id") != std::string::npos && eq != std::string::npos) {
                if (!current.words.empty()) flush();
                pending_id = trim(t.substr(eq + 1));
            }
            continue;
        }
        const auto f = split_fields(t);
        if (f.size() != 5) {
            diag("expected 5 columns (ID FORM POS HEAD DEPREL), got " + std::to_string(f.size()));
            continue;
        }
        TreebankWord w;
        if (!parse_index(f[0], w.id) || !parse_index(f[3], w.head)) {
            diag("ID and HEAD must be non-negative integers");
            continue;
        }
        if (w.id != current.words.size() + 1) {
            diag("ID " + f[0] + " out of sequence, expected " + std::to_string(current.words.size() + 1));
            continue;
        }
        w.form = f[1];
        w.pos = f[2];
        w.deprel = f[4];
        current.words.push_back(std::move(w));
    }
    flush();
    return out;
}

TreebankParse ingest_treebank_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    return ingest_treebank(in);
}

std::string export_treebank(std::span<const TreebankSentence> sentences) {
    std::string out;
    for (const auto& s : sentences) {
        out += "# sent_id = " + s.id + "\n";
        for (const auto& w : s.words)
            out += std::to_string(w.id) + "\t" + w.form + "\t" + w.pos + "\t" + std::to_string(w.head) + "\t" + w.deprel + "\n";
        out += "\n";
    }
    return out;
}

const char* task_name(GrammarTask t) {
    switch (t) {
        case GrammarTask::men_particle: return "men-particle";
        case GrammarTask::interjection_vocative: return "interjection-vocative";
        case GrammarTask::article_infinitive: return "article-infinitive";
        case GrammarTask::particle_optative: return "particle-optative";
        case GrammarTask::article_noun: return "article-noun";
        case GrammarTask::article_adjective: return "article-adjective";
        case GrammarTask::adjective_noun: return "adjective-noun";
        case GrammarTask::genitive_noun: return "genitive-noun";
    }
    return "?";
}

const char* task_label(GrammarTask t) {
    switch (t) {
        case GrammarTask::men_particle: return "μέν -> answering particle, e.g. δέ";
        case GrammarTask::interjection_vocative: return "interjection -> vocative";
        case GrammarTask::article_infinitive: return "article -> articular infinitive";
        case GrammarTask::particle_optative: return "corresponding particle -> optative verb";
        case GrammarTask::article_noun: return "attributive article -> noun";
        case GrammarTask::article_adjective: return "attributive article -> substantive adjective";
        case GrammarTask::adjective_noun: return "attributive adjective -> noun";
        case GrammarTask::genitive_noun: return "genitive noun in attributive position -> noun";
    }
    return "?";
}

GrammarTask parse_task(std::string_view name) {
    for (auto t : kGrammarTasks)
        if (name == task_name(t)) return t;
    throw ConfigError("task", "unknown grammatical task '" + std::string(name) + "'");
}

std::vector<TaskRule> parse_task_rules(std::string_view tsv) {
    std::vector<TaskRule> rules;
    std::istringstream in{std::string(tsv)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        const std::string where = "rules:" + std::to_string(line_no);
        std::vector<std::string> f;
        std::size_t start = 0;
        for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) f.push_back(line.substr(start, tab - start));
        f.push_back(line.substr(start));
        if (f.size() != 6) throw ConfigError(where, "expected 6 tab-separated columns");
        TaskRule r;
        r.task = parse_task(f[0]);
        auto pattern = [&](const std::string& s) {
            const std::string p = s == "*" ? ".*" : s;
            try {
                std::regex check(p);
            } catch (const std::regex_error&) {
                throw ConfigError(where, "bad pattern '" + s + "'");
            }
            return p;
        };
        r.dep_form = pattern(f[1]);
        r.dep_pos = pattern(f[2]);
        r.dep_rel = pattern(f[3]);
        r.head_pos = pattern(f[4]);
        if (f[5] != "-") r.answer = pattern(f[5]);
        rules.push_back(std::move(r));
    }
    return rules;
}

std::string default_task_rules_tsv() {
    return "# task\tdep_form\tdep_pos\tdep_rel\thead_pos\tanswer\n"
           "# Forms are compared without diacritics and in lower case. \"*\" matches anything,\n"
           "# \"-\" means the target is the dependent's head rather than a following answer word.\n"
           "men-particle\tμεν\t*\t*\t*\tδε|δ'|δ’|δʼ|δ᾽\n"
           "interjection-vocative\t*\te.*\t*\t.{7}v.*\t-\n"
           "article-infinitive\t*\tl.*\t*\tv.{3}n.*\t-\n"
           "particle-optative\tαν\t*\t*\tv.{3}o.*\t-\n"
           "article-noun\t*\tl.*\tATR\tn.*\t-\n"
           "article-adjective\t*\tl.*\tATR\ta.*\t-\n"
           "adjective-noun\t*\ta.*\tATR\tn.*\t-\n"
           "genitive-noun\t*\tn.{6}g.*\tATR\tn.*\t-\n";
}

std::vector<TaskRule> default_task_rules() { return parse_task_rules(default_task_rules_tsv()); }

std::vector<DependencyInstance> extract_instances(std::span<const TreebankSentence> sentences, std::span<const TaskRule> rules,
                                                  std::vector<std::string>* diagnostics) {
    struct Compiled {
        GrammarTask task;
        std::regex form, pos, rel, head_pos;
        std::optional<std::regex> answer;
    };
    std::vector<Compiled> compiled;
    for (const auto& r : rules)
        compiled.push_back({r.task, std::regex(r.dep_form), std::regex(r.dep_pos), std::regex(r.dep_rel), std::regex(r.head_pos),
                            r.answer ? std::optional<std::regex>(std::regex(*r.answer)) : std::nullopt});

    std::vector<DependencyInstance> out;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        const auto& words = sentences[s].words;
        std::vector<std::string> forms;
        for (const auto& w : words) forms.push_back(comparison_form(w.form, kComparisonPolicy));
        for (std::size_t i = 0; i < words.size(); ++i) {
            const auto& w = words[i];
            if (w.head > words.size() && diagnostics)
                diagnostics->push_back("sentence " + sentences[s].id + " word " + std::to_string(w.id) + ": head " +
                                       std::to_string(w.head) + " outside the sentence");
            for (const auto& c : compiled) {
                if (!std::regex_match(forms[i], c.form) || !std::regex_match(w.pos, c.pos) || !std::regex_match(w.deprel, c.rel))
                    continue;
                if (c.answer) {
                    std::size_t target = i;
                    for (std::size_t j = i + 1; j < words.size(); ++j)
                        if (std::regex_match(forms[j], *c.answer)) {
                            target = j;
                            break;
                        }
                    out.push_back({s, i, target, c.task});
                    continue;
                }
                if (w.head == 0 || w.head > words.size()) continue;
                if (!std::regex_match(words[w.head - 1].pos, c.head_pos)) continue;
                out.push_back({s, i, w.head - 1, c.task});
            }
        }
    }
    return out;
}

SentenceTokens sentence_tokens(const Tokenizer& tok, const TreebankSentence& sentence) {
    SentenceTokens st;
    st.tokens.push_back(Vocabulary::kBos);
    st.alignment.token_word.push_back(kSpecialToken);
    for (std::size_t w = 0; w < sentence.words.size(); ++w) {
        auto pieces = tok.encode_word(comparison_form(sentence.words[w].form, tok.policy()));
        if (pieces.empty()) pieces.push_back(Vocabulary::kUnk);
        for (auto p : pieces) {
            st.tokens.push_back(p);
            st.alignment.token_word.push_back(w);
        }
    }
    st.tokens.push_back(Vocabulary::kEos);
    st.alignment.token_word.push_back(kSpecialToken);
    st.alignment.words = sentence.words.size();
    return st;
}

OffsetBaseline fixed_offset_baseline(std::span<const DependencyInstance> instances) {
    OffsetBaseline b;
    if (instances.empty()) return b;
    for (int k = -10; k <= 10; ++k) {
        std::size_t hits = 0;
        for (const auto& x : instances)
            if (static_cast<long long>(x.dependent) + k == static_cast<long long>(x.head)) ++hits;
        b.per_offset[static_cast<std::size_t>(k + 10)] = static_cast<double>(hits) / static_cast<double>(instances.size());
    }
    b.best_k = 0;
    b.accuracy = b.per_offset[10];
    for (int d = 1; d <= 10; ++d)
        for (int k : {-d, d}) {
            const double a = b.per_offset[static_cast<std::size_t>(k + 10)];
            if (a > b.accuracy) {
                b.accuracy = a;
                b.best_k = k;
            }
        }
    return b;
}

namespace {

// Word-level matrices for every sentence that has instances.
std::map<std::size_t, AttentionTensor> sentence_attention(const ScorerBackend& backend, std::span<const TreebankSentence> sentences,
                                                         std::span<const DependencyInstance> instances, std::size_t threads) {
    if (!backend.supports_attention()) throw CapabilityError("backend " + backend.model_id() + " does not export attention");
    std::vector<std::size_t> needed;
    for (const auto& x : instances) {
        if (x.sentence >= sentences.size()) throw std::out_of_range("instance names a missing sentence");
        const auto& words = sentences[x.sentence].words;
        if (x.dependent >= words.size() || x.head >= words.size()) throw std::out_of_range("instance word outside its sentence");
        needed.push_back(x.sentence);
    }
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    std::vector<AttentionTensor> tensors(needed.size());
    detail::parallel_for(needed.size(), threads, [&](std::size_t i) {
        const auto st = sentence_tokens(backend.tokenizer(), sentences[needed[i]]);
        tensors[i] = word_level_attention(backend.attention(st.tokens), st.alignment);
    });
    std::map<std::size_t, AttentionTensor> out;
    for (std::size_t i = 0; i < needed.size(); ++i) out.emplace(needed[i], std::move(tensors[i]));
    return out;
}

}  // namespace

double evaluate_head(const ScorerBackend& backend, std::span<const TreebankSentence> sentences,
                     std::span<const DependencyInstance> instances, std::size_t layer, std::size_t head) {
    if (instances.empty()) return 0.0;
    const auto attention = sentence_attention(backend, sentences, instances, 0);
    std::size_t hits = 0;
    for (const auto& x : instances)
        if (attends_most(attention.at(x.sentence), layer, head, x.dependent) == x.head) ++hits;
    return static_cast<double>(hits) / static_cast<double>(instances.size());
}

std::vector<TaskHeadReport> evaluate_all_heads(const ScorerBackend& backend, std::span<const TreebankSentence> sentences,
                                               std::span<const DependencyInstance> instances, std::size_t threads) {
    const auto attention = sentence_attention(backend, sentences, instances, threads);
    std::vector<TaskHeadReport> out;
    for (auto task : kGrammarTasks) {
        std::vector<DependencyInstance> mine;
        for (const auto& x : instances)
            if (x.task == task) mine.push_back(x);
        if (mine.empty()) continue;
        TaskHeadReport r;
        r.task = task;
        r.instances = mine.size();
        const auto& first = attention.at(mine.front().sentence);
        r.layers = first.layers;
        r.heads = first.heads;
        r.accuracy.assign(r.layers * r.heads, 0.0);
        for (const auto& x : mine) {
            const auto& a = attention.at(x.sentence);
            for (std::size_t l = 0; l < r.layers; ++l)
                for (std::size_t h = 0; h < r.heads; ++h)
                    if (attends_most(a, l, h, x.dependent) == x.head) r.accuracy[l * r.heads + h] += 1.0;
        }
        for (auto& v : r.accuracy) v /= static_cast<double>(mine.size());
        const auto best = std::max_element(r.accuracy.begin(), r.accuracy.end()) - r.accuracy.begin();
        r.best_layer = static_cast<std::size_t>(best) / r.heads;
        r.best_head = static_cast<std::size_t>(best) % r.heads;
        r.best_accuracy = r.accuracy[static_cast<std::size_t>(best)];
        r.baseline = fixed_offset_baseline(mine);
        out.push_back(std::move(r));
    }
    return out;
}

std::string head_report_json(std::span<const TaskHeadReport> reports) {
    using json = nlohmann::ordered_json;
    json tasks = json::array();
    for (const auto& r : reports) {
        json matrix = json::array();
        for (std::size_t l = 0; l < r.layers; ++l)
            matrix.push_back(std::vector<double>(r.accuracy.begin() + static_cast<std::ptrdiff_t>(l * r.heads),
                                                 r.accuracy.begin() + static_cast<std::ptrdiff_t>((l + 1) * r.heads)));
        tasks.push_back({{"task", task_name(r.task)},
                         {"instances", r.instances},
                         {"accuracy", std::move(matrix)},
                         {"best_head", {{"layer", r.best_layer}, {"head", r.best_head}, {"accuracy", r.best_accuracy}}},
                         {"baseline", {{"k", r.baseline.best_k}, {"accuracy", r.baseline.accuracy}, {"per_offset", r.baseline.per_offset}}}});
    }
    return json{{"tasks", std::move(tasks)}}.dump(2);
}

namespace {

std::size_t display_width(const std::string& s) { return to_u32(s).size(); }

std::string pad(const std::string& s, std::size_t width, bool left) {
    const std::size_t w = display_width(s);
    if (w >= width) return s;
    return left ? std::string(width - w, ' ') + s : s + std::string(width - w, ' ');
}

}  // namespace

std::string render_head_table(std::span<const TaskHeadReport> reports) {
    const std::vector<std::string> titles{"Grammatical task", "Accuracy", "Specialized attention head", "Fixed-offset baseline"};
    std::vector<std::vector<std::string>> rows;
    char buf[64];
    for (const auto& r : reports) {
        std::vector<std::string> row{task_label(r.task)};
        std::snprintf(buf, sizeof buf, "%.0f%%", 100.0 * r.best_accuracy);
        row.emplace_back(buf);
        row.push_back(std::to_string(r.best_layer) + "-" + std::to_string(r.best_head));
        std::snprintf(buf, sizeof buf, "%.0f%% (%d)", 100.0 * r.baseline.accuracy, r.baseline.best_k);
        row.emplace_back(buf);
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width;
    for (const auto& t : titles) width.push_back(display_width(t));
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
    auto line = [&](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) s += " | ";
            s += pad(cells[c], width[c], c > 0);
        }
        return s + "\n";
    };
    std::string out = line(titles);
    for (std::size_t c = 0; c < width.size(); ++c) out += (c ? "-+-" : "") + std::string(width[c], '-');
    out += "\n";
    for (const auto& row : rows) out += line(row);
    return out;
}

}  // namespace scriptorium
