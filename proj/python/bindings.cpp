// Python bindings: the command pipeline plus the small pure functions that
// are handy from a notebook.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"
#include "scriptorium/commands.hpp"
#include "scriptorium/config.hpp"
#include "scriptorium/errors.hpp"
#include "scriptorium/flags.hpp"
#include "scriptorium/ngram.hpp"
#include "scriptorium/scribal.hpp"
#include "scriptorium/simulate.hpp"

namespace py = pybind11;
using namespace scriptorium;
using Overrides = std::vector<std::pair<std::string, std::string>>;

namespace {

py::object from_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

CostTable cost_table(const std::string& costs) {
    if (costs == "default") return CostTable::default_table();
    if (costs == "unit") return CostTable::unit();
    return CostTable::parse(costs);
}

// Word-level n-gram model over a list of texts, in the comparison view.
class NgramModel {
public:
    NgramModel(const std::vector<std::string>& texts, int order, double lambda, std::int64_t min_count, const std::string& costs) {
        std::vector<NormalizedText> corpus;
        for (const auto& t : texts) corpus.push_back(normalize(t, kComparisonPolicy));
        tokenizer_ = std::make_shared<WordTokenizer>(WordTokenizer::build(corpus));
        std::vector<Tokenization> tokenized;
        for (const auto& t : corpus) {
            tokenized.push_back(tokenizer_->tokenize(t));
            for (std::size_t i = 0; i < t.word_count(); ++i) dict_.add(t.comparison_word(i));
        }
        NgramOptions o;
        o.order = order;
        o.lambda = lambda;
        scorer_ = std::make_shared<NgramScorer>(tokenizer_, tokenized, o);
        index_ = std::make_unique<NeighborhoodIndex>(dict_, min_count, cost_table(costs));
    }

    std::string model_id() const { return scorer_->model_id(); }
    std::size_t vocabulary_size() const { return scorer_->predictable_size(); }

    py::list flag(const std::string& text, double k, std::size_t max_suggestions) const {
        FlagOptions o;
        o.k = k;
        o.max_suggestions = max_suggestions;
        std::vector<FlagRecord> records;
        {
            py::gil_scoped_release release;
            records = compute_flags(*scorer_, normalize(text, kComparisonPolicy), *index_, o);
        }
        py::list out;
        for (const auto& r : records) {
            py::list sugg;
            for (const auto& s : r.suggestions) sugg.append(py::dict(py::arg("word") = s.word, py::arg("chance") = s.chance, py::arg("distance") = s.distance));
            py::dict d;
            d["word_index"] = r.word_index;
            d["word"] = r.word;
            d["chance"] = r.chance;
            d["rho"] = r.rho;
            d["confidence"] = r.confidence_restricted;
            d["confidence_global"] = r.confidence_global;
            d["scribal_dist"] = r.scribal_dist;
            d["scribal_dist_global"] = r.scribal_dist_global;
            d["top_global"] = r.top_global;
            d["degenerate"] = r.degenerate;
            d["suggestions"] = sugg;
            out.append(d);
        }
        return out;
    }

private:
    std::shared_ptr<WordTokenizer> tokenizer_;
    std::shared_ptr<NgramScorer> scorer_;
    AuthorDictionary dict_;
    std::unique_ptr<NeighborhoodIndex> index_;
};

py::dict run_result(const RunResult& r) {
    py::dict d;
    d["dir"] = r.dir;
    d["run_id"] = r.manifest.run_id;
    d["model_id"] = r.manifest.model_id;
    d["summary"] = from_json(r.summary).attr("get")("summary");
    py::list outputs;
    for (const auto& o : r.manifest.outputs) outputs.append(py::make_tuple(o.path, o.sha256));
    d["outputs"] = outputs;
    return d;
}

}  // namespace

PYBIND11_MODULE(_scriptorium, m) {
    m.doc() = "Scribal error detection and gap filling";

    // deliberately leaked references: the translator outlives module teardown
    static PyObject* base = py::exception<Error>(m, "ScriptoriumError", PyExc_RuntimeError).release().ptr();
    static PyObject* config_error = py::exception<ConfigError>(m, "ConfigError", base).release().ptr();
    static PyObject* ingestion_error = py::exception<IngestionError>(m, "IngestionError", base).release().ptr();
    static PyObject* transport_error = py::exception<TransportError>(m, "TransportError", base).release().ptr();
    static PyObject* capability_error = py::exception<CapabilityError>(m, "CapabilityError", base).release().ptr();
    py::register_exception_translator([](std::exception_ptr p) {
        auto raise = [](py::handle type, const Error& e, const char* attr = nullptr, py::object value = py::none()) {
            py::object inst = py::reinterpret_borrow<py::object>(type)(e.what());
            if (attr) inst.attr(attr) = value;
            inst.attr("exit_code") = exit_code_for(e);
            PyErr_SetObject(type.ptr(), inst.ptr());
        };
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            raise(config_error, e, "field", py::str(e.field));
        } catch (const IngestionError& e) {
            raise(ingestion_error, e, "byte_offset", py::int_(e.byte_offset));
        } catch (const TransportError& e) {
            raise(transport_error, e);
        } catch (const CapabilityError& e) {
            raise(capability_error, e);
        } catch (const Error& e) {
            raise(base, e);
        }
    });

    m.def(
        "normalize",
        [](const std::string& text, bool strip_diacritics, bool case_fold) {
            const auto n = normalize(text, {strip_diacritics, case_fold});
            std::vector<std::string> words;
            for (std::size_t i = 0; i < n.word_count(); ++i) words.emplace_back(n.word(i));
            py::dict d;
            d["text"] = n.normalized;
            d["words"] = words;
            d["comparison"] = n.comparison;
            return d;
        },
        py::arg("text"), py::arg("strip_diacritics") = false, py::arg("case_fold") = false,
        "NFC text under the given policy, its words and their comparison forms.");
    m.def(
        "scribal_distance",
        [](const std::string& a, const std::string& b, const std::string& costs) { return scribal_distance(a, b, cost_table(costs)); },
        py::arg("a"), py::arg("b"), py::arg("costs") = "default",
        "Weighted edit distance; costs is 'default', 'unit' or an INI [costs] section.");
    m.def("count_letters", &count_letters, py::arg("text"));
    m.def(
        "canonical_fill", [](const std::string& s) { return canonical_fill(s); }, py::arg("text"),
        "The form two fills are compared in.");
    m.def("dkw_epsilon", &dkw_epsilon, py::arg("alpha"), py::arg("n"));

    py::class_<NgramModel>(m, "NgramModel")
        .def(py::init<const std::vector<std::string>&, int, double, std::int64_t, const std::string&>(), py::arg("texts"),
             py::arg("order") = 3, py::arg("smoothing") = 0.01, py::arg("min_count") = 1, py::arg("costs") = "default")
        .def_property_readonly("model_id", &NgramModel::model_id)
        .def_property_readonly("vocabulary_size", &NgramModel::vocabulary_size)
        .def("flag", &NgramModel::flag, py::arg("text"), py::arg("k") = 3.0, py::arg("max_suggestions") = 10,
             "One record per word, with rho = chance / confidence.");

    m.def("commands", &artifact_commands);
    m.def(
        "check_config",
        [](const std::string& text, const std::filesystem::path& base_dir, const Overrides& overrides) {
            const RunConfig c = parse_config(text, base_dir, overrides);
            py::dict d;
            d["seed"] = c.run.seed;
            d["out_dir"] = c.run.out_dir;
            d["backend"] = c.scorer.backend;
            return d;
        },
        py::arg("text"), py::arg("base_dir") = ".", py::arg("overrides") = Overrides{},
        "Validates an INI run configuration; raises ConfigError naming the field.");
    m.def(
        "run",
        [](const std::string& command, const std::string& config, const std::filesystem::path& config_dir,
           const Overrides& overrides, const std::filesystem::path& out) {
            Invocation inv{command, config, std::filesystem::absolute(config_dir), overrides, out.empty() ? out : std::filesystem::absolute(out)};
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run_command(inv);
            }
            return run_result(r);
        },
        py::arg("command"), py::arg("config") = "", py::arg("config_dir") = ".", py::arg("overrides") = Overrides{},
        py::arg("out") = std::filesystem::path{}, "Runs an artifact command; returns the run directory and summary.");
    m.def(
        "replay",
        [](const std::filesystem::path& manifest, const std::filesystem::path& out) {
            ReplayResult r;
            {
                py::gil_scoped_release release;
                r = replay_manifest(manifest, out);
            }
            py::dict d = run_result(r.rerun);
            d["identical"] = r.identical;
            d["mismatches"] = r.mismatches;
            return d;
        },
        py::arg("manifest"), py::arg("out") = std::filesystem::path{});
}
