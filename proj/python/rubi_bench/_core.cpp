#include "rubi/dataset_io.hpp"
#include "rubi/experiment.hpp"
#include "rubi/gradcheck_suite.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

namespace py = pybind11;
using namespace rubi;
using nlohmann::json;

namespace {

json to_json_doc(const py::object& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

RunConfig config_of(const py::object& obj) {
    if (py::isinstance<py::str>(obj)) return load_config(obj.cast<std::string>());
    return parse_config(to_json_doc(obj));
}

py::dict summary(const RunResult& r) {
    py::dict d;
    d["run_id"] = r.run_id;
    d["dir"] = r.dir.string();
    d["label"] = run_label(r.config);
    d["test_id"] = to_py(json(r.test_id.accuracy));
    d["test_ood"] = to_py(json(r.test_ood.accuracy));
    d["epochs"] = to_py(json(r.log.epochs));
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Synthetic changing-priors benchmark, bias-reduction training and reports";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<RunExists>(m, "RunExists", PyExc_FileExistsError);

    m.def("resolve_config", [](const py::object& cfg) { return to_py(config_to_json(config_of(cfg))); },
          py::arg("config"), "Validated configuration with every default filled in. Accepts a dict or a JSON path.");
    m.def("run_id", [](const py::object& cfg) { return run_id(config_of(cfg)); }, py::arg("config"));
    m.def("run_label", [](const py::object& cfg) { return run_label(config_of(cfg)); }, py::arg("config"));

    m.def(
        "gen_data",
        [](const py::object& cfg) {
            const RunConfig c = config_of(cfg);
            const Corpus corpus = [&] {
                py::gil_scoped_release release;
                return generate(c.dataset);
            }();
            write_dataset(corpus, dataset_dir(c));
            return dataset_dir(c).string();
        },
        py::arg("config"), "Writes the three splits and the sidecar; returns the dataset directory.");

    m.def(
        "bias_audit",
        [](const py::object& cfg) {
            const RunConfig c = config_of(cfg);
            const Corpus corpus = load_corpus(c);
            py::list rows;
            for (const PatternAudit& a : bias_audit(corpus.train)) {
                py::dict row;
                row["pattern"] = a.pattern.key();
                row["count"] = a.count;
                row["majority"] = corpus.answers[static_cast<std::size_t>(a.majority_answer)];
                row["majority_share"] = a.majority_share;
                row["entropy"] = a.entropy;
                rows.append(row);
            }
            return rows;
        },
        py::arg("config"));

    m.def(
        "train",
        [](const py::object& cfg, bool force) {
            const RunConfig c = config_of(cfg);
            const Corpus corpus = load_corpus(c);
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run_training(c, corpus, force);
            }
            return summary(r);
        },
        py::arg("config"), py::arg("force") = false, "Trains one run; gen_data must have been called first.");

    m.def("load_run", [](const std::string& dir) { return summary(load_run(dir)); }, py::arg("dir"));

    m.def(
        "predict",
        [](const std::string& dir, const std::string& split) {
            const RunResult r = load_run(dir);
            const Corpus corpus = load_corpus(r.config);
            const Network net = load_network(r, corpus);
            return predict_split(net, corpus.split(parse_split(split)), r.config.train.strategy.strategy);
        },
        py::arg("dir"), py::arg("split") = "test_ood", "Inference-path predictions of a finished run.");

    m.def(
        "gradcheck",
        [](std::optional<std::string> fault) {
            std::optional<ScopedBackwardFault> injected;
            if (fault) injected.emplace(parse_op(*fault), 1.5);
            py::list rows;
            for (const GradcheckEntry& e : run_gradcheck_suite()) {
                py::dict row;
                row["name"] = e.name;
                row["composite"] = e.composite;
                row["max_rel_error"] = e.max_rel_error;
                row["passed"] = e.passed;
                rows.append(row);
            }
            return rows;
        },
        py::arg("inject_fault") = py::none());

    m.def("lr_at", [](std::size_t epoch, const py::object& cfg) { return lr_at(epoch, config_of(cfg).train); },
          py::arg("epoch"), py::arg("config"));
    m.def("total_variation",
          [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) { return total_variation(a, b); },
          py::arg("a"), py::arg("b"));
}
