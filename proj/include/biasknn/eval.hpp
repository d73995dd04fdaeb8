#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biasknn/backend.hpp"
#include "biasknn/baselines.hpp"
#include "biasknn/features.hpp"
#include "biasknn/knn.hpp"
#include "biasknn/task.hpp"

namespace biasknn {

enum class Method { bias_knn, zero_lm, raw_icl };
enum class IclSemantics { per_class, total };

Method parse_method(const std::string& name);
std::string to_string(Method method);

struct RunConfig {
  TaskSpec task;
  std::string model_id;
  Method method = Method::bias_knn;
  int m = 3;
  int k = 3;
  DistanceMetric metric = DistanceMetric::cosine;
  FeatureKind feature_kind = FeatureKind::probability;
  int num_runs = 5;
  std::uint64_t seed_base = 0;
  IclSemantics icl_semantics = IclSemantics::per_class;
  std::string icl_separator = "\n";

  void validate() const;
};

struct Stats {
  double mean = 0.0;
  double min = 0.0;
  double std_dev = 0.0;  // population form (divide by n)
};

Stats aggregate(const std::vector<double>& values);

struct EvalReport {
  RunConfig config;
  std::vector<std::uint64_t> per_run_seeds;
  std::vector<double> per_run_accuracy;
  double mean = 0.0;
  double min = 0.0;
  double std_dev = 0.0;
};

// Runs num_runs seeded evaluations (seed = seed_base + run index): build
// the datastore or demonstration set, classify the full test split,
// aggregate mean/min/population std.
EvalReport run_eval(const RunConfig& cfg, const Dataset& train,
                    const Dataset& test, Backend& backend);

// Accuracies are serialized with 6 decimal places; the layout is fixed so
// identical runs produce byte-identical files.
std::string report_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& path);
std::string report_table(const EvalReport& report);  // percentages, 1 decimal

struct AblationGrid {
  std::vector<int> m_values;
  std::vector<int> k_values;
  std::vector<DistanceMetric> metrics;
  std::vector<FeatureKind> feature_kinds;
  std::vector<std::string> templates;
  std::vector<std::map<std::string, std::string>> verbalizers;

  void validate() const;
};

struct AblationPoint {
  int m = 0;
  int k = 0;
  DistanceMetric metric = DistanceMetric::cosine;
  FeatureKind feature_kind = FeatureKind::probability;
  std::size_t template_idx = 0;
  std::size_t verbalizer_idx = 0;
};

struct AblationResult {
  AblationPoint point;
  std::optional<EvalReport> report;  // empty on error
  std::string error;
};

// One report per grid point, iterated lexicographically over
// (m, k, metric, feature kind, template, verbalizer). All points share
// the base config's seeds so comparisons isolate the varied axis; a
// failing point is recorded and does not abort the rest.
std::vector<AblationResult> run_ablation(const AblationGrid& grid,
                                         const RunConfig& base,
                                         const Dataset& train,
                                         const Dataset& test, Backend& backend);

void write_ablation_outputs(const std::vector<AblationResult>& results,
                            const AblationGrid& grid, const std::string& out_dir);

// Scatter data for the bias plot: CSV rows
// "example_id,gold_label,p_<label0>,p_<label1>". Binary tasks only; the
// y=x line is the zero-shot decision boundary consumers overlay.
void emit_scatter(const TaskSpec& task, const Dataset& dataset,
                  const std::vector<FeatureVector>& features,
                  const std::string& out_path);

}  // namespace biasknn
