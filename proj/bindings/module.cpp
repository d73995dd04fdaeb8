#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "biasknn/eval.hpp"

namespace py = pybind11;
using namespace biasknn;

PYBIND11_MODULE(biasknn, m) {
  m.doc() = "bias-kNN: few-shot text classification from biased verbalizer "
            "probabilities";

  py::register_exception<Error>(m, "Error");

  // --- task core ---
  py::enum_<Split>(m, "Split")
      .value("train", Split::train)
      .value("test", Split::test);

  py::class_<TaskSpec>(m, "TaskSpec")
      .def(py::init<>())
      .def_readwrite("name", &TaskSpec::name)
      .def_readwrite("template_text", &TaskSpec::template_text)
      .def_readwrite("labels", &TaskSpec::labels)
      .def_readwrite("verbalizer", &TaskSpec::verbalizer)
      .def_readwrite("input_fields", &TaskSpec::input_fields)
      .def("label_index", &TaskSpec::label_index)
      .def("verbalizer_word", &TaskSpec::verbalizer_word)
      .def("candidates", &TaskSpec::candidates)
      .def("validate", &TaskSpec::validate)
      .def("__repr__", [](const TaskSpec& t) {
        return "TaskSpec(name='" + t.name + "', labels=" +
               std::to_string(t.labels.size()) + ")";
      });

  py::class_<Example>(m, "Example")
      .def(py::init<>())
      .def_readwrite("id", &Example::id)
      .def_readwrite("fields", &Example::fields)
      .def_readwrite("gold_label", &Example::gold_label);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("examples", &Dataset::examples)
      .def_readwrite("split", &Dataset::split)
      .def("__len__", [](const Dataset& d) { return d.examples.size(); });

  m.def("load_task_config", &load_task_config, py::arg("path"));
  m.def("task_from_json_text", &task_from_json_text, py::arg("text"));
  m.def("task_to_json_text", &task_to_json_text, py::arg("task"));
  m.def("load_dataset", &load_dataset, py::arg("path"), py::arg("task"),
        py::arg("split"));
  m.def("save_dataset_jsonl", &save_dataset_jsonl, py::arg("dataset"),
        py::arg("path"));
  m.def("render_prompt", &render_prompt, py::arg("task"), py::arg("example"));
  m.def("render_demonstration", &render_demonstration, py::arg("task"),
        py::arg("example"));

  // --- lm backend ---
  py::class_<ScoreRequest>(m, "ScoreRequest")
      .def(py::init<>())
      .def(py::init([](std::string model_id, std::string prompt,
                       std::vector<std::string> candidates) {
             return ScoreRequest{std::move(model_id), std::move(prompt),
                                 std::move(candidates)};
           }),
           py::arg("model_id"), py::arg("prompt"), py::arg("candidates"))
      .def_readwrite("model_id", &ScoreRequest::model_id)
      .def_readwrite("prompt", &ScoreRequest::prompt)
      .def_readwrite("candidates", &ScoreRequest::candidates);

  py::class_<CandidateScore>(m, "CandidateScore")
      .def(py::init<>())
      .def_readwrite("candidate", &CandidateScore::candidate)
      .def_readwrite("logprob", &CandidateScore::logprob)
      .def_readwrite("logit", &CandidateScore::logit);

  py::class_<SyntheticParams>(m, "SyntheticParams")
      .def(py::init<>())
      .def_readwrite("num_labels", &SyntheticParams::num_labels)
      .def_readwrite("class_angles_deg", &SyntheticParams::class_angles_deg)
      .def_readwrite("angle_noise_deg", &SyntheticParams::angle_noise_deg)
      .def_readwrite("radius_lo", &SyntheticParams::radius_lo)
      .def_readwrite("radius_hi", &SyntheticParams::radius_hi)
      .def_readwrite("seed", &SyntheticParams::seed)
      .def("validate", &SyntheticParams::validate);

  py::enum_<BackendKind>(m, "BackendKind")
      .value("http", BackendKind::http)
      .value("cache_backed", BackendKind::cache_backed)
      .value("synthetic", BackendKind::synthetic);

  py::class_<BackendConfig>(m, "BackendConfig")
      .def(py::init<>())
      .def_readwrite("kind", &BackendConfig::kind)
      .def_readwrite("endpoint", &BackendConfig::endpoint)
      .def_readwrite("cache_path", &BackendConfig::cache_path)
      .def_readwrite("model_id", &BackendConfig::model_id)
      .def_readwrite("max_in_flight", &BackendConfig::max_in_flight)
      .def_readwrite("synthetic_params", &BackendConfig::synthetic_params)
      .def("validate", &BackendConfig::validate);

  py::class_<Backend>(m, "Backend")
      .def("score", &Backend::score, py::arg("request"),
           py::call_guard<py::gil_scoped_release>())
      .def("score_batch", &Backend::score_batch, py::arg("requests"),
           py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("model_id", &Backend::model_id)
      .def_property_readonly("max_in_flight", &Backend::max_in_flight);

  m.def(
      "make_backend",
      [](const BackendConfig& cfg, const std::string& cache_path) {
        auto backend = make_backend(cfg);
        if (!cache_path.empty())
          backend = make_caching_backend(std::move(backend), cache_path);
        return backend;
      },
      py::arg("config"), py::arg("cache_path") = "",
      "Build a backend; a non-empty cache_path wraps it in a "
      "read-through/write-through score cache.");

  m.def("write_cache", &write_cache, py::arg("path"), py::arg("request"),
        py::arg("scores"));
  m.def("sha256_hex",
        [](const std::string& data) { return sha256_hex(data); },
        py::arg("data"));
  m.def("synthetic_probabilities", &synthetic_probabilities, py::arg("params"),
        py::arg("class_idx"), py::arg("universe_idx"));

  py::class_<SyntheticFixture>(m, "SyntheticFixture")
      .def_readwrite("task", &SyntheticFixture::task)
      .def_readwrite("dataset", &SyntheticFixture::dataset)
      .def_readwrite("backend", &SyntheticFixture::backend);

  m.def("make_synthetic_task", &make_synthetic_task, py::arg("params"),
        py::arg("n_per_class"));
  m.def("make_synthetic_dataset", &make_synthetic_dataset, py::arg("params"),
        py::arg("lo_index"), py::arg("hi_index"), py::arg("split"));

  // --- features ---
  py::enum_<FeatureKind>(m, "FeatureKind")
      .value("probability", FeatureKind::probability)
      .value("logit", FeatureKind::logit);

  py::class_<FeatureVector>(m, "FeatureVector")
      .def(py::init<>())
      .def_readwrite("values", &FeatureVector::values)
      .def_readwrite("kind", &FeatureVector::kind)
      .def_readwrite("example_id", &FeatureVector::example_id);

  m.def("extract_feature", &extract_feature, py::arg("task"),
        py::arg("example"), py::arg("backend"), py::arg("kind"));
  m.def("extract_features", &extract_features, py::arg("task"),
        py::arg("dataset"), py::arg("backend"), py::arg("kind"));
  m.def("write_feature_csv", &write_feature_csv, py::arg("task"),
        py::arg("dataset"), py::arg("features"), py::arg("path"));

  // --- knn engine ---
  py::enum_<DistanceMetric>(m, "DistanceMetric")
      .value("cosine", DistanceMetric::cosine)
      .value("euclidean", DistanceMetric::euclidean)
      .value("manhattan", DistanceMetric::manhattan)
      .value("chebyshev", DistanceMetric::chebyshev);

  m.def(
      "distance",
      [](DistanceMetric metric, const std::vector<double>& a,
         const std::vector<double>& b) { return distance(metric, a, b); },
      py::arg("metric"), py::arg("a"), py::arg("b"));
  m.def("parse_metric", &parse_metric, py::arg("name"));

  py::class_<DatastoreEntry>(m, "DatastoreEntry")
      .def(py::init<>())
      .def_readwrite("feature", &DatastoreEntry::feature)
      .def_readwrite("label", &DatastoreEntry::label)
      .def_readwrite("example_id", &DatastoreEntry::example_id);

  py::class_<Datastore>(m, "Datastore")
      .def(py::init<>())
      .def_readwrite("entries", &Datastore::entries)
      .def_readwrite("task_name", &Datastore::task_name)
      .def_readwrite("kind", &Datastore::kind)
      .def_readwrite("shots_per_class", &Datastore::shots_per_class)
      .def_readwrite("build_seed", &Datastore::build_seed)
      .def("__len__", [](const Datastore& s) { return s.entries.size(); });

  py::class_<Neighbor>(m, "Neighbor")
      .def_readwrite("entry_index", &Neighbor::entry_index)
      .def_readwrite("distance", &Neighbor::distance)
      .def_readwrite("label", &Neighbor::label);

  py::class_<Prediction>(m, "Prediction")
      .def_readwrite("label", &Prediction::label)
      .def_readwrite("neighbors", &Prediction::neighbors)
      .def_readwrite("vote_counts", &Prediction::vote_counts);

  m.def("sample_per_class", &sample_per_class, py::arg("task"),
        py::arg("train"), py::arg("m"), py::arg("seed"));
  m.def("build_datastore", &build_datastore, py::arg("task"), py::arg("train"),
        py::arg("features"), py::arg("m"), py::arg("seed"));
  m.def("query_neighbors", &query_neighbors, py::arg("store"),
        py::arg("query"), py::arg("k"), py::arg("metric"));
  m.def("majority_vote", &majority_vote, py::arg("task"), py::arg("neighbors"));
  m.def("predict", &predict, py::arg("store"), py::arg("query"), py::arg("k"),
        py::arg("metric"), py::arg("task"));
  m.def("save_datastore", &save_datastore, py::arg("store"), py::arg("path"));
  m.def("load_datastore", &load_datastore, py::arg("path"));

  // --- baselines ---
  py::class_<IclConfig>(m, "IclConfig")
      .def(py::init<>())
      .def_readwrite("m", &IclConfig::m)
      .def_readwrite("order_seed", &IclConfig::order_seed)
      .def_readwrite("separator", &IclConfig::separator);

  m.def("zero_lm_predict", &zero_lm_predict, py::arg("task"),
        py::arg("feature"));
  m.def("build_icl_prompt", &build_icl_prompt, py::arg("task"),
        py::arg("demos"), py::arg("test"), py::arg("config"));
  m.def("raw_icl_predict", &raw_icl_predict, py::arg("task"), py::arg("demos"),
        py::arg("test"), py::arg("config"), py::arg("backend"));

  // --- eval harness ---
  py::enum_<Method>(m, "Method")
      .value("bias_knn", Method::bias_knn)
      .value("zero_lm", Method::zero_lm)
      .value("raw_icl", Method::raw_icl);

  py::enum_<IclSemantics>(m, "IclSemantics")
      .value("per_class", IclSemantics::per_class)
      .value("total", IclSemantics::total);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("task", &RunConfig::task)
      .def_readwrite("model_id", &RunConfig::model_id)
      .def_readwrite("method", &RunConfig::method)
      .def_readwrite("m", &RunConfig::m)
      .def_readwrite("k", &RunConfig::k)
      .def_readwrite("metric", &RunConfig::metric)
      .def_readwrite("feature_kind", &RunConfig::feature_kind)
      .def_readwrite("num_runs", &RunConfig::num_runs)
      .def_readwrite("seed_base", &RunConfig::seed_base)
      .def_readwrite("icl_semantics", &RunConfig::icl_semantics)
      .def_readwrite("icl_separator", &RunConfig::icl_separator);

  py::class_<Stats>(m, "Stats")
      .def_readonly("mean", &Stats::mean)
      .def_readonly("min", &Stats::min)
      .def_readonly("std_dev", &Stats::std_dev);

  m.def("aggregate", &aggregate, py::arg("values"));

  py::class_<EvalReport>(m, "EvalReport")
      .def_readwrite("config", &EvalReport::config)
      .def_readwrite("per_run_seeds", &EvalReport::per_run_seeds)
      .def_readwrite("per_run_accuracy", &EvalReport::per_run_accuracy)
      .def_readwrite("mean", &EvalReport::mean)
      .def_readwrite("min", &EvalReport::min)
      .def_readwrite("std_dev", &EvalReport::std_dev);

  m.def("run_eval", &run_eval, py::arg("config"), py::arg("train"),
        py::arg("test"), py::arg("backend"),
        py::call_guard<py::gil_scoped_release>());
  m.def("report_json", &report_json, py::arg("report"));
  m.def("report_table", &report_table, py::arg("report"));
  m.def("write_report", &write_report, py::arg("report"), py::arg("path"));

  py::class_<AblationGrid>(m, "AblationGrid")
      .def(py::init<>())
      .def_readwrite("m_values", &AblationGrid::m_values)
      .def_readwrite("k_values", &AblationGrid::k_values)
      .def_readwrite("metrics", &AblationGrid::metrics)
      .def_readwrite("feature_kinds", &AblationGrid::feature_kinds)
      .def_readwrite("templates", &AblationGrid::templates)
      .def_readwrite("verbalizers", &AblationGrid::verbalizers);

  py::class_<AblationPoint>(m, "AblationPoint")
      .def_readonly("m", &AblationPoint::m)
      .def_readonly("k", &AblationPoint::k)
      .def_readonly("metric", &AblationPoint::metric)
      .def_readonly("feature_kind", &AblationPoint::feature_kind)
      .def_readonly("template_idx", &AblationPoint::template_idx)
      .def_readonly("verbalizer_idx", &AblationPoint::verbalizer_idx);

  py::class_<AblationResult>(m, "AblationResult")
      .def_readonly("point", &AblationResult::point)
      .def_readonly("report", &AblationResult::report)
      .def_readonly("error", &AblationResult::error);

  m.def("run_ablation", &run_ablation, py::arg("grid"), py::arg("base"),
        py::arg("train"), py::arg("test"), py::arg("backend"),
        py::call_guard<py::gil_scoped_release>());
  m.def("write_ablation_outputs", &write_ablation_outputs, py::arg("results"),
        py::arg("grid"), py::arg("out_dir"));
  m.def("emit_scatter", &emit_scatter, py::arg("task"), py::arg("dataset"),
        py::arg("features"), py::arg("out_path"));
}
