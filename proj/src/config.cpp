#include "scriptorium/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "scriptorium/corpus.hpp"
#include "scriptorium/errors.hpp"

namespace scriptorium {

namespace {

struct Field {
    std::string path;
    std::vector<std::string> values;

    const std::string& one() const {
        if (values.size() != 1) throw ConfigError(path, "expected a single value");
        return values[0];
    }
};

std::uint64_t to_uint(const Field& f) {
    const std::string& s = f.one();
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(f.path, "not a non-negative integer: " + s);
    return v;
}

double to_double(const std::string& path, const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError(path, "not a number: " + s);
    }
}

double to_double(const Field& f) { return to_double(f.path, f.one()); }

double to_positive(const Field& f) {
    const double v = to_double(f);
    if (!(v > 0.0)) throw ConfigError(f.path, "must be positive");
    return v;
}

double to_fraction(const Field& f) {
    const double v = to_double(f);
    if (v < 0.0 || v > 1.0) throw ConfigError(f.path, "must lie in [0, 1]");
    return v;
}

std::size_t to_count(const Field& f) {
    const auto v = to_uint(f);
    if (v == 0) throw ConfigError(f.path, "must be at least 1");
    return static_cast<std::size_t>(v);
}

bool to_bool(const Field& f) {
    const std::string& s = f.one();
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(f.path, "not a boolean: " + s);
}

std::string to_choice(const Field& f, std::initializer_list<std::string_view> allowed) {
    const std::string& s = f.one();
    for (auto a : allowed)
        if (s == a) return s;
    std::string list;
    for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    throw ConfigError(f.path, "expected one of " + list + ", got " + s);
}

// Same message, reported at `path`.
ConfigError at(const std::string& path, const ConfigError& e) {
    std::string what = e.what();
    if (what.rfind(e.field + ": ", 0) == 0) what = what.substr(e.field.size() + 2);
    return ConfigError(path, what);
}

std::string joined(const Field& f) {
    std::string s;
    for (const auto& v : f.values) s += (s.empty() ? "" : " ") + v;
    return s;
}

class Builder {
public:
    Builder(RunConfig& c, const std::filesystem::path& base) : c_(c), base_(base) { define(); }

    void set(const std::string& section, const std::string& key, std::vector<std::string> values) {
        const std::string path = section + "." + key;
        if (section == "costs") {
            costs_ += key + " = " + joined(Field{path, values}) + "\n";
            return;
        }
        const auto it = setters_.find(path);
        if (it == setters_.end()) {
            bool known_section = false;
            for (const auto& [k, fn] : setters_) known_section |= k.rfind(section + ".", 0) == 0;
            throw ConfigError(known_section ? path : section, known_section ? "unknown key" : "unknown section");
        }
        it->second(Field{path, std::move(values)});
    }

    void finish() {
        if (!costs_.empty()) {
            c_.costs = CostTable::parse("[costs]\n" + costs_);
            c_.costs_given = true;
        }
        const auto& w = c_.scorer.ngram.interpolation;
        if (w[0] + w[1] + w[2] <= 0.0) throw ConfigError("scorer.interpolation", "weights must not all be zero");
        if (c_.scorer.backend == "remote") {
            if (c_.scorer.url.empty()) throw ConfigError("scorer.url", "required for the remote backend");
            if (c_.scorer.vocab.empty()) throw ConfigError("scorer.vocab", "required for the remote backend");
        }
        if (c_.run.version != kConfigVersion)
            throw ConfigError("run.version", "unsupported schema version " + std::to_string(c_.run.version));
    }

private:
    std::filesystem::path path_of(const Field& f) const {
        std::filesystem::path p(f.one());
        return p.is_relative() ? (base_ / p).lexically_normal() : p;
    }

    void define() {
        auto& s = setters_;
        s["run.version"] = [this](const Field& f) { c_.run.version = static_cast<int>(to_uint(f)); };
        s["run.seed"] = [this](const Field& f) { c_.run.seed = to_uint(f); };
        s["run.out_dir"] = [this](const Field& f) { c_.run.out_dir = path_of(f); };
        s["run.threads"] = [this](const Field& f) { c_.run.threads = static_cast<std::size_t>(to_uint(f)); };

        s["corpus.source"] = [this](const Field& f) { c_.corpus.source = to_choice(f, {"manifest", "synthetic"}); };
        s["corpus.manifest"] = [this](const Field& f) { c_.corpus.manifest = path_of(f); };
        s["corpus.test_fraction"] = [this](const Field& f) { c_.corpus.test_fraction = to_fraction(f); };
        s["corpus.paragraph_words"] = [this](const Field& f) { c_.corpus.paragraph_words = to_count(f); };

        s["scorer.backend"] = [this](const Field& f) { c_.scorer.backend = to_choice(f, {"ngram", "remote"}); };
        s["scorer.url"] = [this](const Field& f) { c_.scorer.url = f.one(); };
        s["scorer.vocab"] = [this](const Field& f) { c_.scorer.vocab = path_of(f); };
        s["scorer.timeout_ms"] = [this](const Field& f) { c_.scorer.timeout_ms = to_count(f); };
        s["scorer.order"] = [this](const Field& f) {
            const auto v = to_uint(f);
            if (v < 1 || v > 3) throw ConfigError(f.path, "must be 1, 2 or 3");
            c_.scorer.ngram.order = static_cast<int>(v);
        };
        s["scorer.lambda"] = [this](const Field& f) { c_.scorer.ngram.lambda = to_positive(f); };
        s["scorer.interpolation"] = [this](const Field& f) {
            if (f.values.size() != 3) throw ConfigError(f.path, "expected three weights");
            for (std::size_t i = 0; i < 3; ++i) {
                const double v = to_double(f.path, f.values[i]);
                if (v < 0.0) throw ConfigError(f.path, "weights must be non-negative");
                c_.scorer.ngram.interpolation[i] = v;
            }
        };
        s["scorer.context_limit"] = [this](const Field& f) { c_.scorer.ngram.context_limit = to_count(f); };

        s["flags.k"] = [this](const Field& f) { c_.flags.k = to_positive(f); };
        s["flags.scheme"] = [this](const Field& f) {
            ThresholdScheme::named(f.one());
            c_.flags.scheme = f.one();
        };
        s["flags.target"] = [this](const Field& f) { c_.flags.target = to_choice(f, {"test", "all"}); };
        s["flags.max_suggestions"] = [this](const Field& f) { c_.flags.max_suggestions = to_count(f); };
        s["flags.global_beam"] = [this](const Field& f) { c_.flags.global_beam = to_count(f); };

        auto& syn = c_.synthetic;
        s["synthetic.seed"] = [&syn](const Field& f) { syn.seed = to_uint(f); };
        s["synthetic.language_seed"] = [&syn](const Field& f) { syn.language.seed = to_uint(f); };
        s["synthetic.base_words"] = [&syn](const Field& f) { syn.language.base_words = to_count(f); };
        s["synthetic.variant_fraction"] = [&syn](const Field& f) { syn.language.variant_fraction = to_fraction(f); };
        s["synthetic.successors"] = [&syn](const Field& f) { syn.language.successors = to_count(f); };
        s["synthetic.zipf_exponent"] = [&syn](const Field& f) { syn.language.zipf_exponent = to_positive(f); };
        s["synthetic.sentence_end"] = [&syn](const Field& f) {
            syn.language.sentence_end = to_fraction(f);
            if (syn.language.sentence_end <= 0.0) throw ConfigError(f.path, "must be positive");
        };
        s["synthetic.seed_words"] = [&syn](const Field& f) { syn.seed_words = to_count(f); };
        s["synthetic.train_words"] = [&syn](const Field& f) { syn.train_words = to_count(f); };
        s["synthetic.paragraphs"] = [&syn](const Field& f) { syn.paragraphs = to_count(f); };
        s["synthetic.paragraph_words"] = [&syn](const Field& f) { syn.paragraph_words = to_count(f); };
        s["synthetic.documents"] = [this](const Field& f) { c_.synthetic_documents = to_count(f); };
        s["synthetic.document_words"] = [this](const Field& f) { c_.synthetic_document_words = to_count(f); };

        auto& det = c_.detection;
        s["detection.instances"] = [&det](const Field& f) { det.options.instances = to_count(f); };
        s["detection.schemes"] = [&det](const Field& f) {
            det.options.schemes.clear();
            for (const auto& v : f.values) {
                try {
                    det.options.schemes.push_back(parse_scheme(v));
                } catch (const ConfigError& e) {
                    throw at(f.path, e);
                }
            }
            if (det.options.schemes.empty()) throw ConfigError(f.path, "no scheme given");
        };
        s["detection.k"] = [&det](const Field& f) { det.options.k = to_positive(f); };
        s["detection.confidence_ascending"] = [&det](const Field& f) { det.options.confidence_ascending = to_bool(f); };
        s["detection.seed"] = [&det](const Field& f) { det.options.seed = to_uint(f); };
        s["detection.h0"] = [&det](const Field& f) { det.h0 = static_cast<std::size_t>(to_uint(f)); };
        s["detection.h1"] = [&det](const Field& f) { det.h1 = static_cast<std::size_t>(to_uint(f)); };
        s["detection.metric"] = [&det](const Field& f) {
            try {
                det.metric = parse_scheme(f.one());
            } catch (const ConfigError& e) {
                throw at(f.path, e);
            }
        };

        auto& g = c_.gaps;
        s["gaps.tasks"] = [&g](const Field& f) { g.tasks = to_count(f); };
        s["gaps.train_tasks"] = [&g](const Field& f) { g.train_tasks = to_count(f); };
        s["gaps.seed"] = [&g](const Field& f) { g.seed = to_uint(f); };
        s["gaps.beam_width"] = [&g](const Field& f) { g.options.beam_width = to_count(f); };
        s["gaps.hidden"] = [&g](const Field& f) { g.train.hidden = to_count(f); };
        s["gaps.batch"] = [&g](const Field& f) { g.train.batch = to_count(f); };
        s["gaps.learning_rate"] = [&g](const Field& f) { g.train.learning_rate = to_positive(f); };
        s["gaps.epochs"] = [&g](const Field& f) { g.train.epochs = to_count(f); };
        s["gaps.train_seed"] = [&g](const Field& f) { g.train.seed = to_uint(f); };
        s["gaps.tasks_file"] = [this](const Field& f) { c_.gaps.tasks_file = path_of(f); };
        s["gaps.truth_file"] = [this](const Field& f) { c_.gaps.truth_file = path_of(f); };

        s["attention.treebank"] = [this](const Field& f) { c_.attention.treebank = path_of(f); };
        s["attention.rules"] = [this](const Field& f) { c_.attention.rules = path_of(f); };

        auto& r = c_.review;
        s["review.host"] = [&r](const Field& f) { r.host = f.one(); };
        s["review.port"] = [&r](const Field& f) {
            const auto v = to_uint(f);
            if (v > 65535) throw ConfigError(f.path, "not a port");
            r.port = static_cast<int>(v);
        };
        s["review.token"] = [&r](const Field& f) { r.token = f.one(); };
        s["review.tasks"] = [this](const Field& f) { c_.review.tasks = path_of(f); };
        s["review.truth"] = [this](const Field& f) { c_.review.truth = path_of(f); };
        s["review.predictions"] = [this](const Field& f) { c_.review.predictions = path_of(f); };
        s["review.log_dir"] = [this](const Field& f) { c_.review.log_dir = path_of(f); };
        s["review.snapshot_every"] = [&r](const Field& f) { r.snapshot_every = to_count(f); };
    }

    RunConfig& c_;
    std::filesystem::path base_;
    std::map<std::string, std::function<void(const Field&)>> setters_;
    std::string costs_;
};

}  // namespace

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig c;
    c.base_dir = base_dir;
    c.run.out_dir = (base_dir / "runs").lexically_normal();
    c.review.log_dir = (base_dir / "review").lexically_normal();
    Builder b(c, base_dir);

    std::istringstream in{std::string(text)};
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError("config", e.what());
    }
    for (auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        if (item.parents.empty()) throw ConfigError(item.name, "key outside any section");
        std::string section;
        for (const auto& p : item.parents) section += (section.empty() ? "" : ".") + p;
        b.set(section, item.name, item.inputs);
    }
    for (const auto& [key, value] : overrides) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) throw ConfigError(key, "override needs section.key");
        std::vector<std::string> values;
        std::istringstream words(value);
        for (std::string w; words >> w;) values.push_back(w);
        if (values.empty()) values.emplace_back();
        b.set(key.substr(0, dot), key.substr(dot + 1), std::move(values));
    }
    b.finish();
    return c;
}

RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::string text;
    try {
        text = read_file(file);
    } catch (const std::exception& e) {
        throw ConfigError("config", e.what());
    }
    return parse_config(text, std::filesystem::absolute(file).parent_path(), overrides);
}

}  // namespace scriptorium
