#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hsml/config.hpp"
#include "hsml/data.hpp"
#include "hsml/error.hpp"
#include "hsml/heads.hpp"
#include "hsml/model.hpp"
#include "hsml/selftest.hpp"
#include "hsml/trainer.hpp"

namespace py = pybind11;
using namespace hsml;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a, const char* what) {
    if (a.ndim() == 1) {
        // a vector of targets is one column
        Matrix m(static_cast<std::size_t>(a.shape(0)), 1);
        std::copy_n(a.data(), m.data.size(), m.data.begin());
        return m;
    }
    if (a.ndim() != 2) throw InvalidShape(std::string(what) + ": expected a 2-d array");
    Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy_n(a.data(), m.data.size(), m.data.begin());
    return m;
}

Array to_array(const Matrix& m) {
    Array out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

template <typename T>
Array to_array(const Tensor<T>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

Episode make_episode(const Array& xl, const Array& yl, const Array& xu, std::optional<Array> yu,
                     const std::string& kind) {
    Episode ep;
    ep.kind = parse_task_kind(kind);
    ep.x_labeled = to_matrix(xl, "x_labeled");
    ep.y_labeled = to_matrix(yl, "y_labeled");
    ep.x_unlabeled = to_matrix(xu, "x_unlabeled");
    if (yu) ep.y_unlabeled = to_matrix(*yu, "y_unlabeled");
    ep.validate(false);
    return ep;
}

ModelConfig model_config(const py::dict& kw) {
    ModelConfig cfg;
    std::map<std::string, std::string> kv = cfg.to_map();
    for (const auto& [k, v] : kw) {
        const auto key = py::str(k).cast<std::string>();
        if (!kv.count(key)) throw InvalidConfig("model." + key + ": unknown key");
        kv[key] = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : py::str(v).cast<std::string>();
    }
    cfg = ModelConfig::from_map(kv);
    cfg.validate();
    return cfg;
}

RunConfig run_config(const py::dict& overrides) {
    RunConfig cfg;
    for (const auto& [k, v] : overrides) {
        const std::string value =
            py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : py::str(v).cast<std::string>();
        set_field(cfg, py::str(k).cast<std::string>(), value);
    }
    return cfg;
}

py::dict property_dict(const PropertyResult& r) {
    py::dict d;
    d["name"] = r.name;
    d["passed"] = r.passed;
    d["max_error"] = r.max_error;
    d["tolerance"] = r.tolerance;
    d["trials"] = r.trials;
    d["seconds"] = r.seconds;
    d["detail"] = r.detail;
    return d;
}

struct Model {
    ModelParams<float> params;

    py::tuple embed(const Episode& ep) const {
        const auto e = forward_embed(ep, params);
        return py::make_tuple(to_array(e.labeled), to_array(e.unlabeled));
    }

    // Posteriors [N^U, C] for classification, GP means [N^U, C] otherwise.
    Array predict(const Episode& ep) const {
        const auto e = forward_embed(ep, params);
        if (ep.kind == TaskKind::classification) {
            const auto labels = ep.labeled_classes();
            const auto protos = compute_prototypes(e.labeled, labels, ep.num_targets());
            return to_array(class_posterior(e.unlabeled, protos));
        }
        std::vector<float> y(ep.y_labeled.data.begin(), ep.y_labeled.data.end());
        const Tensor<float> targets({ep.y_labeled.rows, ep.y_labeled.cols}, std::move(y));
        return to_array(gp_predict(e.unlabeled, e.labeled, targets, params.gp).mean);
    }

    double loss(const Episode& ep) const {
        const HeadKind head = ep.kind == TaskKind::classification ? HeadKind::prototype : HeadKind::gaussian_process;
        return episode_forward(ep, params, head).loss[0];
    }
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Episodic meta-learning over tabular tasks with tensor attention";

    // Every library error derives from Error; the Python side sees the
    // category in the exception class name.
    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidShape>(m, "InvalidShape", base.ptr());
    py::register_exception<InvalidValue>(m, "InvalidValue", base.ptr());
    py::register_exception<InvalidEpisode>(m, "InvalidEpisode", base.ptr());
    py::register_exception<InvalidConfig>(m, "InvalidConfig", base.ptr());
    py::register_exception<NumericalFailure>(m, "NumericalFailure", base.ptr());
    py::register_exception<IngestionError>(m, "IngestionError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<UsageError>(m, "UsageError", base.ptr());

    py::class_<Episode>(m, "Episode")
        .def(py::init(&make_episode), py::arg("x_labeled"), py::arg("y_labeled"), py::arg("x_unlabeled"),
             py::arg("y_unlabeled") = py::none(), py::arg("kind") = "classification")
        .def_property_readonly("x_labeled", [](const Episode& e) { return to_array(e.x_labeled); })
        .def_property_readonly("y_labeled", [](const Episode& e) { return to_array(e.y_labeled); })
        .def_property_readonly("x_unlabeled", [](const Episode& e) { return to_array(e.x_unlabeled); })
        .def_property_readonly("y_unlabeled", [](const Episode& e) { return to_array(e.y_unlabeled); })
        .def_property_readonly("kind", [](const Episode& e) { return to_string(e.kind); })
        .def_property_readonly("n_labeled", &Episode::n_labeled)
        .def_property_readonly("n_unlabeled", &Episode::n_unlabeled)
        .def_property_readonly("num_attributes", &Episode::num_attributes);

    py::class_<TaskDataset>(m, "TaskDataset")
        .def_readonly("name", &TaskDataset::name)
        .def_property_readonly("kind", [](const TaskDataset& d) { return to_string(d.kind); })
        .def_property_readonly("x", [](const TaskDataset& d) { return to_array(d.x); })
        .def_property_readonly("y", [](const TaskDataset& d) { return to_array(d.y); })
        .def_readonly("attribute_names", &TaskDataset::attribute_names)
        .def_readonly("target_names", &TaskDataset::target_names)
        .def_readonly("provenance", &TaskDataset::provenance)
        .def(
            "sample_episode",
            [](const TaskDataset& d, std::size_t shots, std::size_t unlabeled, std::uint64_t seed) -> std::optional<Episode> {
                SamplerConfig s;
                s.shots = shots;
                s.unlabeled = unlabeled;
                std::mt19937_64 rng(seed);
                return sample_episode(d, s, rng);
            },
            py::arg("shots") = 1, py::arg("unlabeled") = 20, py::arg("seed") = 0);

    py::class_<CorpusSplit>(m, "CorpusSplit")
        .def_readonly("train", &CorpusSplit::train)
        .def_readonly("validation", &CorpusSplit::validation)
        .def_readonly("test", &CorpusSplit::test)
        .def_readonly("seed", &CorpusSplit::seed)
        .def("write", [](const CorpusSplit& c, const std::filesystem::path& dir) { write_corpus(c, dir); });

    m.def(
        "generate_corpus",
        [](const std::string& kind, std::uint64_t seed, std::size_t tasks, std::uint64_t split_seed) {
            std::vector<TaskDataset> all;
            if (kind == "circle-spiral") all = generate_circle_spiral_corpus(seed, tasks);
            else if (kind == "regression") all = generate_regression_corpus(seed, tasks);
            else throw InvalidConfig("kind: expected circle-spiral or regression, got '" + kind + "'");
            return split_corpus(std::move(all), split_seed);
        },
        py::arg("kind") = "circle-spiral", py::arg("seed") = 0, py::arg("tasks") = 100, py::arg("split_seed") = 0);
    m.def("read_corpus", &read_corpus, py::arg("path"));
    m.def(
        "ingest_tabular",
        [](const std::filesystem::path& path, const std::string& target, const std::string& kind) {
            return ingest_tabular(path, target, parse_task_kind(kind));
        },
        py::arg("path"), py::arg("target"), py::arg("kind") = "classification");

    m.def(
        "build_input_tensor", [](const Episode& ep) { return to_array(build_input_tensor<double>(ep)); },
        py::arg("episode"));

    py::class_<Model>(m, "Model")
        .def(py::init([](std::uint64_t seed, const py::kwargs& kw) {
                 return Model{ModelParams<float>::init(model_config(kw), seed)};
             }),
             py::arg("seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) { return Model{load_checkpoint(p)}; })
        .def("save", [](const Model& mdl, const std::filesystem::path& p) { save_checkpoint(mdl.params, p); })
        .def_property_readonly("config", [](const Model& mdl) { return mdl.params.config.to_map(); })
        .def_property_readonly("num_parameters", [](const Model& mdl) { return mdl.params.parameter_count(); })
        .def("parameter_names",
             [](const Model& mdl) {
                 std::vector<std::string> names;
                 auto copy = mdl.params;
                 copy.for_each([&](const std::string& n, Tensor<float>&) { names.push_back(n); });
                 return names;
             })
        .def("embed", &Model::embed, py::arg("episode"))
        .def("predict", &Model::predict, py::arg("episode"))
        .def("loss", &Model::loss, py::arg("episode"))
        .def(
            "evaluate",
            [](const Model& mdl, const std::vector<TaskDataset>& tasks, std::size_t shots, std::size_t trials,
               std::uint64_t seed) {
                if (tasks.empty()) throw InvalidConfig("evaluate: no tasks");
                const HeadKind head =
                    tasks.front().kind == TaskKind::classification ? HeadKind::prototype : HeadKind::gaussian_process;
                SamplerConfig s;
                s.shots = shots;
                const auto r = evaluate(tasks, mdl.params, head, s, trials, seed);
                py::dict d;
                d["metric"] = r.metric;
                d["mean"] = r.mean;
                d["standard_error"] = r.standard_error;
                d["per_task"] = r.per_task;
                d["episodes"] = r.episodes;
                return d;
            },
            py::arg("tasks"), py::arg("shots") = 1, py::arg("trials") = 20, py::arg("seed") = 0);

    m.def(
        "train",
        [](const CorpusSplit& corpus, const py::dict& overrides) {
            RunConfig cfg = run_config(overrides);
            cfg.train.validate();
            cfg.model.validate();
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = meta_train(corpus, cfg.model, cfg.train);
            }
            return py::make_tuple(Model{r.best}, r.report.to_text());
        },
        py::arg("corpus"), py::arg("overrides") = py::dict(),
        "Meta-trains on the corpus. `overrides` maps 'section.key' to a value, as in run configs. Returns "
        "(best model, report text).");

    m.def(
        "selftest",
        [](std::size_t trials, bool use_double, std::uint64_t seed) {
            SelftestOptions o;
            o.trials = trials;
            o.use_double = use_double;
            o.seed = seed;
            py::list out;
            for (const auto& r : run_selftest(o)) out.append(property_dict(r));
            return out;
        },
        py::arg("trials") = 20, py::arg("use_double") = false, py::arg("seed") = 20240601);

    m.def("ablation_names", &ablation_names);
}
