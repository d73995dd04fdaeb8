#include "biasknn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "biasknn/rng.hpp"
#include "util.hpp"

namespace biasknn {

Method parse_method(const std::string& name) {
  if (name == "bias-knn") return Method::bias_knn;
  if (name == "zero-lm") return Method::zero_lm;
  if (name == "raw-icl") return Method::raw_icl;
  throw Error("unknown method \"" + name +
              "\" (expected bias-knn, zero-lm or raw-icl)");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::bias_knn: return "bias-knn";
    case Method::zero_lm: return "zero-lm";
    case Method::raw_icl: return "raw-icl";
  }
  throw Error("unknown method");
}

void RunConfig::validate() const {
  task.validate();
  if (num_runs < 1) throw Error("run config: num_runs must be >= 1");
  if (k < 1) throw Error("run config: k must be >= 1");
  if (method != Method::zero_lm && m < 1)
    throw Error("run config: m must be >= 1 for " + to_string(method));
}

Stats aggregate(const std::vector<double>& values) {
  if (values.empty()) throw Error("aggregate: no values");
  Stats stats;
  stats.mean = std::accumulate(values.begin(), values.end(), 0.0) /
               static_cast<double>(values.size());
  stats.min = *std::min_element(values.begin(), values.end());
  double sq = 0.0;
  for (double v : values) sq += (v - stats.mean) * (v - stats.mean);
  stats.std_dev = std::sqrt(sq / static_cast<double>(values.size()));
  return stats;
}

namespace {

void check_eval_inputs(const RunConfig& cfg, const Dataset& train,
                       const Dataset& test) {
  cfg.validate();
  std::set<std::string> train_ids;
  for (const auto& example : train.examples)
    if (!train_ids.insert(example.id).second)
      throw Error("train split: duplicate id \"" + example.id + "\"");
  std::set<std::string> test_ids;
  for (const auto& example : test.examples) {
    if (!test_ids.insert(example.id).second)
      throw Error("test split: duplicate id \"" + example.id + "\"");
    if (!example.gold_label)
      throw Error("test example \"" + example.id + "\" missing gold label");
  }
  for (const auto& id : test_ids)
    if (train_ids.count(id))
      throw Error("train/test splits share example id \"" + id + "\"");
  if (test.examples.empty()) throw Error("test split is empty");
}

// Demonstration sampling under "total" semantics: m examples from the
// whole labeled train split, one shared shuffled pool.
std::vector<std::size_t> sample_total(const Dataset& train, int m,
                                      std::uint64_t seed) {
  for (const auto& example : train.examples)
    if (!example.gold_label)
      throw Error("train example \"" + example.id + "\" missing gold label");
  if (train.examples.size() < static_cast<std::size_t>(m))
    throw Error("train split has " + std::to_string(train.examples.size()) +
                " examples, need m=" + std::to_string(m));
  std::vector<std::size_t> pool(train.examples.size());
  std::iota(pool.begin(), pool.end(), 0);
  SplitMix64 gen(combine(seed, kStreamIclPool));
  fisher_yates(pool, gen);
  pool.resize(static_cast<std::size_t>(m));
  return pool;
}

double knn_run_accuracy(const RunConfig& cfg, const Dataset& train,
                        const Dataset& test,
                        const std::vector<FeatureVector>& train_features,
                        const std::vector<FeatureVector>& test_features,
                        std::uint64_t seed) {
  const Datastore store =
      build_datastore(cfg.task, train, train_features, cfg.m, seed);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.examples.size(); ++i) {
    const auto prediction =
        predict(store, test_features[i], cfg.k, cfg.metric, cfg.task);
    if (prediction.label == *test.examples[i].gold_label) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(test.examples.size());
}

double icl_run_accuracy(const RunConfig& cfg, const Dataset& train,
                        const Dataset& test, Backend& backend,
                        std::uint64_t seed) {
  const auto demo_indices = cfg.icl_semantics == IclSemantics::per_class
                                ? sample_per_class(cfg.task, train, cfg.m, seed)
                                : sample_total(train, cfg.m, seed);
  std::vector<Example> demos;
  demos.reserve(demo_indices.size());
  for (std::size_t idx : demo_indices) demos.push_back(train.examples[idx]);

  IclConfig icl;
  icl.m = cfg.m;
  icl.order_seed = combine(seed, kStreamIclOrder);
  icl.separator = cfg.icl_separator;

  std::vector<ScoreRequest> reqs;
  reqs.reserve(test.examples.size());
  const auto candidates = cfg.task.candidates();
  for (const auto& example : test.examples)
    reqs.push_back(ScoreRequest{backend.model_id(),
                                build_icl_prompt(cfg.task, demos, example, icl),
                                candidates});
  std::vector<std::vector<CandidateScore>> batches;
  try {
    batches = backend.score_batch(reqs);
  } catch (const BatchError& e) {
    throw Error("example \"" + test.examples[e.index].id + "\": " + e.what());
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto& scores = batches[i];
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.size(); ++c)
      if (scores[c].logprob > scores[best].logprob) best = c;
    if (cfg.task.labels[best] == *test.examples[i].gold_label) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(test.examples.size());
}

struct FeatureSet {
  std::vector<FeatureVector> train;
  std::vector<FeatureVector> test;
};

// Core protocol; `precomputed` lets the ablation runner share feature
// extraction across grid points.
EvalReport run_eval_impl(const RunConfig& cfg, const Dataset& train,
                         const Dataset& test, Backend& backend,
                         const FeatureSet* precomputed) {
  check_eval_inputs(cfg, train, test);

  EvalReport report;
  report.config = cfg;

  FeatureSet local;
  const FeatureSet* features = precomputed;
  if (!features && cfg.method != Method::raw_icl) {
    if (cfg.method == Method::bias_knn)
      local.train = extract_features(cfg.task, train, backend, cfg.feature_kind);
    local.test = extract_features(cfg.task, test, backend, cfg.feature_kind);
    features = &local;
  }

  for (int r = 0; r < cfg.num_runs; ++r) {
    const std::uint64_t seed = cfg.seed_base + static_cast<std::uint64_t>(r);
    report.per_run_seeds.push_back(seed);
    double accuracy = 0.0;
    switch (cfg.method) {
      case Method::bias_knn:
        accuracy = knn_run_accuracy(cfg, train, test, features->train,
                                    features->test, seed);
        break;
      case Method::zero_lm: {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < test.examples.size(); ++i)
          if (zero_lm_predict(cfg.task, features->test[i]) ==
              *test.examples[i].gold_label)
            ++correct;
        accuracy = static_cast<double>(correct) /
                   static_cast<double>(test.examples.size());
        break;
      }
      case Method::raw_icl:
        accuracy = icl_run_accuracy(cfg, train, test, backend, seed);
        break;
    }
    report.per_run_accuracy.push_back(accuracy);
  }

  const Stats stats = aggregate(report.per_run_accuracy);
  report.mean = stats.mean;
  report.min = stats.min;
  report.std_dev = stats.std_dev;
  return report;
}

}  // namespace

EvalReport run_eval(const RunConfig& cfg, const Dataset& train,
                    const Dataset& test, Backend& backend) {
  return run_eval_impl(cfg, train, test, backend, nullptr);
}

std::string report_json(const EvalReport& report) {
  using detail::format_fixed6;
  using detail::json_escape;
  std::string out = "{\n  \"config\": {";
  out += "\"task\": \"" + json_escape(report.config.task.name) + "\", ";
  out += "\"model\": \"" + json_escape(report.config.model_id) + "\", ";
  out += "\"method\": \"" + to_string(report.config.method) + "\", ";
  out += "\"m\": " + std::to_string(report.config.m) + ", ";
  out += "\"k\": " + std::to_string(report.config.k) + ", ";
  out += "\"metric\": \"" + to_string(report.config.metric) + "\", ";
  out += "\"feature\": \"" + to_string(report.config.feature_kind) + "\", ";
  out += "\"num_runs\": " + std::to_string(report.config.num_runs) + ", ";
  out += "\"seed_base\": " + std::to_string(report.config.seed_base);
  out += "},\n  \"per_run\": [\n";
  for (std::size_t i = 0; i < report.per_run_accuracy.size(); ++i) {
    out += "    {\"seed\": " + std::to_string(report.per_run_seeds[i]) +
           ", \"accuracy\": " + format_fixed6(report.per_run_accuracy[i]) + "}";
    if (i + 1 < report.per_run_accuracy.size()) out += ",";
    out += "\n";
  }
  out += "  ],\n";
  out += "  \"mean\": " + format_fixed6(report.mean) + ",\n";
  out += "  \"min\": " + format_fixed6(report.min) + ",\n";
  out += "  \"std\": " + format_fixed6(report.std_dev) + "\n";
  out += "}\n";
  return out;
}

void write_report(const EvalReport& report, const std::string& path) {
  detail::write_file(path, report_json(report));
}

std::string report_table(const EvalReport& report) {
  using detail::format_percent1;
  std::string out = "task=" + report.config.task.name +
                    " model=" + report.config.model_id +
                    " method=" + to_string(report.config.method);
  if (report.config.method != Method::zero_lm)
    out += " m=" + std::to_string(report.config.m);
  if (report.config.method == Method::bias_knn)
    out += " k=" + std::to_string(report.config.k) +
           " metric=" + to_string(report.config.metric) +
           " feature=" + to_string(report.config.feature_kind);
  out += "\n";
  for (std::size_t i = 0; i < report.per_run_accuracy.size(); ++i)
    out += "  run " + std::to_string(i) + " (seed " +
           std::to_string(report.per_run_seeds[i]) + "): accuracy " +
           format_percent1(report.per_run_accuracy[i]) + "%\n";
  out += "  mean/min/std = " + format_percent1(report.mean) + "/" +
         format_percent1(report.min) + "/" + format_percent1(report.std_dev) +
         "\n";
  return out;
}

void AblationGrid::validate() const {
  if (m_values.empty() || k_values.empty() || metrics.empty() ||
      feature_kinds.empty() || templates.empty() || verbalizers.empty())
    throw Error("ablation grid: every axis needs at least one value");
}

namespace {

TaskSpec variant_task(const TaskSpec& base, const std::string& template_text,
                      const std::map<std::string, std::string>& verbalizer) {
  TaskSpec task = base;
  task.template_text = template_text;
  task.verbalizer = verbalizer;
  task.validate();
  return task;
}

}  // namespace

std::vector<AblationResult> run_ablation(const AblationGrid& grid,
                                         const RunConfig& base,
                                         const Dataset& train,
                                         const Dataset& test, Backend& backend) {
  grid.validate();
  std::map<std::tuple<std::size_t, std::size_t, FeatureKind>, FeatureSet> memo;
  std::vector<AblationResult> results;

  for (int m : grid.m_values)
    for (int k : grid.k_values)
      for (DistanceMetric metric : grid.metrics)
        for (FeatureKind kind : grid.feature_kinds)
          for (std::size_t ti = 0; ti < grid.templates.size(); ++ti)
            for (std::size_t vi = 0; vi < grid.verbalizers.size(); ++vi) {
              AblationResult result;
              result.point = AblationPoint{m, k, metric, kind, ti, vi};
              try {
                RunConfig cfg = base;
                cfg.m = m;
                cfg.k = k;
                cfg.metric = metric;
                cfg.feature_kind = kind;
                cfg.task = variant_task(base.task, grid.templates[ti],
                                        grid.verbalizers[vi]);

                const FeatureSet* features = nullptr;
                if (cfg.method != Method::raw_icl) {
                  auto key = std::make_tuple(ti, vi, kind);
                  auto it = memo.find(key);
                  if (it == memo.end()) {
                    FeatureSet set;
                    if (cfg.method == Method::bias_knn)
                      set.train =
                          extract_features(cfg.task, train, backend, kind);
                    set.test = extract_features(cfg.task, test, backend, kind);
                    it = memo.emplace(key, std::move(set)).first;
                  }
                  features = &it->second;
                }
                result.report =
                    run_eval_impl(cfg, train, test, backend, features);
              } catch (const std::exception& e) {
                result.error = e.what();
              }
              results.push_back(std::move(result));
            }
  return results;
}

void write_ablation_outputs(const std::vector<AblationResult>& results,
                            const AblationGrid& grid, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir);

  std::string index = "point,m,k,metric,feature,template,verbalizer,mean,min,std,error\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& result = results[i];
    char name[32];
    std::snprintf(name, sizeof(name), "point-%04zu.json", i);

    std::string verbalizer_text;
    for (const auto& [label, word] : grid.verbalizers[result.point.verbalizer_idx]) {
      if (!verbalizer_text.empty()) verbalizer_text += "; ";
      verbalizer_text += label + "=" + word;
    }
    index += std::to_string(i) + "," + std::to_string(result.point.m) + "," +
             std::to_string(result.point.k) + "," +
             to_string(result.point.metric) + "," +
             to_string(result.point.feature_kind) + "," +
             detail::csv_escape(grid.templates[result.point.template_idx]) + "," +
             detail::csv_escape(verbalizer_text) + ",";
    if (result.report) {
      detail::write_file((fs::path(out_dir) / name).string(),
                         report_json(*result.report));
      index += detail::format_fixed6(result.report->mean) + "," +
               detail::format_fixed6(result.report->min) + "," +
               detail::format_fixed6(result.report->std_dev) + ",";
    } else {
      index += ",,," + detail::csv_escape(result.error);
    }
    index += "\n";
  }
  detail::write_file((fs::path(out_dir) / "index.csv").string(), index);
}

void emit_scatter(const TaskSpec& task, const Dataset& dataset,
                  const std::vector<FeatureVector>& features,
                  const std::string& out_path) {
  if (task.labels.size() != 2) throw Error("scatter requires binary task");
  if (features.size() != dataset.examples.size())
    throw Error("scatter: features not aligned with dataset");

  std::string out = "example_id,gold_label,p_" +
                    detail::csv_escape(task.labels[0]) + ",p_" +
                    detail::csv_escape(task.labels[1]) + "\n";
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].values.size() != 2)
      throw Error("scatter: feature for \"" + features[i].example_id +
                  "\" is not 2-dimensional");
    const auto& example = dataset.examples[i];
    out += detail::csv_escape(example.id);
    out += ',';
    if (example.gold_label) out += detail::csv_escape(*example.gold_label);
    out += ',';
    out += detail::format_double(features[i].values[0]);
    out += ',';
    out += detail::format_double(features[i].values[1]);
    out += '\n';
  }
  detail::write_file(out_path, out);
}

}  // namespace biasknn
