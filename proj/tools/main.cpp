// Command-line interface: score | eval | ablate | baseline | scatter |
// make-synthetic. Human-readable tables go to stdout; machine-readable
// reports, caches and fixtures go to the paths given by flags.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <json.hpp>

#include "biasknn/eval.hpp"

namespace fs = std::filesystem;
using namespace biasknn;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open file for writing: " + path);
  out << content;
  if (!out.flush()) throw Error("write failed: " + path);
}

struct BackendFlags {
  std::string endpoint;
  std::string synthetic_path;
  std::string cache_path;
  std::string model;
  int max_in_flight = 4;
};

void add_backend_flags(CLI::App* cmd, BackendFlags& flags) {
  cmd->add_option("--backend", flags.endpoint,
                  "HTTP scoring endpoint, e.g. http://localhost:8080");
  cmd->add_option("--synthetic", flags.synthetic_path,
                  "synthetic backend params JSON (from make-synthetic)");
  cmd->add_option(
      "--cache", flags.cache_path,
      "score cache JSONL; alone: serve from cache only, with --backend or "
      "--synthetic: read-through/write-through");
  cmd->add_option("--model", flags.model, "model identifier sent to the backend");
  cmd->add_option("--max-in-flight", flags.max_in_flight,
                  "max concurrent scoring requests")
      ->check(CLI::PositiveNumber);
}

std::unique_ptr<Backend> build_backend(const BackendFlags& flags) {
  if (!flags.endpoint.empty() && !flags.synthetic_path.empty())
    throw Error("choose one scoring source: --backend or --synthetic");
  if (flags.endpoint.empty() && flags.synthetic_path.empty() &&
      flags.cache_path.empty())
    throw Error(
        "no scoring source: pass --backend URL, --synthetic params.json or "
        "--cache file");

  std::unique_ptr<Backend> backend;
  if (!flags.endpoint.empty()) {
    BackendConfig cfg;
    cfg.kind = BackendKind::http;
    cfg.endpoint = flags.endpoint;
    cfg.model_id = flags.model.empty() ? "default" : flags.model;
    cfg.max_in_flight = flags.max_in_flight;
    backend = make_backend(cfg);
    if (!flags.cache_path.empty())
      backend = make_caching_backend(std::move(backend), flags.cache_path);
  } else if (!flags.synthetic_path.empty()) {
    BackendConfig cfg;
    cfg.kind = BackendKind::synthetic;
    cfg.synthetic_params = load_synthetic_params(flags.synthetic_path);
    cfg.model_id = flags.model.empty() ? "synthetic" : flags.model;
    cfg.max_in_flight = flags.max_in_flight;
    backend = make_backend(cfg);
    if (!flags.cache_path.empty())
      backend = make_caching_backend(std::move(backend), flags.cache_path);
  } else {
    BackendConfig cfg;
    cfg.kind = BackendKind::cache_backed;
    cfg.cache_path = flags.cache_path;
    cfg.model_id = flags.model.empty() ? "default" : flags.model;
    cfg.max_in_flight = flags.max_in_flight;
    backend = make_backend(cfg);
  }
  return backend;
}

struct EvalFlags {
  std::string task_path;
  std::string train_path;
  std::string test_path;
  std::string method = "bias-knn";
  int m = 3;
  int k = 3;
  std::string metric = "cosine";
  std::string feature = "probability";
  int num_runs = 5;
  std::uint64_t seed_base = 0;
  std::string icl_m_semantics = "per-class";
  std::string icl_separator = "\n";
  std::string out_path;
  BackendFlags backend;
};

void add_eval_flags(CLI::App* cmd, EvalFlags& flags, bool with_method) {
  cmd->add_option("--task", flags.task_path, "task config JSON")->required();
  cmd->add_option("--train", flags.train_path,
                  "labeled train split (JSONL or CSV)");
  cmd->add_option("--test", flags.test_path, "labeled test split (JSONL or CSV)")
      ->required();
  if (with_method)
    cmd->add_option("--method", flags.method, "bias-knn | zero-lm | raw-icl");
  cmd->add_option("--m", flags.m, "labeled examples per class (shots)");
  cmd->add_option("--k", flags.k, "number of nearest neighbors");
  cmd->add_option("--metric", flags.metric,
                  "cosine | euclidean | manhattan | chebyshev");
  cmd->add_option("--feature", flags.feature, "probability | logit");
  cmd->add_option("--num-runs", flags.num_runs, "seeded repetitions");
  cmd->add_option("--seed-base", flags.seed_base,
                  "seed of run r is seed-base + r");
  cmd->add_option("--icl-m-semantics", flags.icl_m_semantics,
                  "per-class | total (raw-icl demo count meaning)");
  cmd->add_option("--icl-separator", flags.icl_separator,
                  "separator between ICL demonstrations");
  cmd->add_option("--out", flags.out_path, "write the report JSON here");
  add_backend_flags(cmd, flags.backend);
}

int run_eval_command(const EvalFlags& flags) {
  const TaskSpec task = load_task_config(flags.task_path);
  const Method method = parse_method(flags.method);

  Dataset train;
  if (!flags.train_path.empty())
    train = load_dataset(flags.train_path, task, Split::train);
  else if (method != Method::zero_lm)
    throw Error("--train is required for method " + flags.method);
  const Dataset test = load_dataset(flags.test_path, task, Split::test);

  auto backend = build_backend(flags.backend);

  RunConfig cfg;
  cfg.task = task;
  cfg.model_id = backend->model_id();
  cfg.method = method;
  cfg.m = flags.m;
  cfg.k = flags.k;
  cfg.metric = parse_metric(flags.metric);
  cfg.feature_kind = parse_feature_kind(flags.feature);
  cfg.num_runs = flags.num_runs;
  cfg.seed_base = flags.seed_base;
  if (flags.icl_m_semantics == "per-class")
    cfg.icl_semantics = IclSemantics::per_class;
  else if (flags.icl_m_semantics == "total")
    cfg.icl_semantics = IclSemantics::total;
  else
    throw Error("--icl-m-semantics must be per-class or total");
  cfg.icl_separator = flags.icl_separator;

  const EvalReport report = run_eval(cfg, train, test, *backend);
  std::cout << report_table(report);
  if (!flags.out_path.empty()) {
    write_report(report, flags.out_path);
    std::cout << "report written to " << flags.out_path << "\n";
  }
  return 0;
}

struct AblateFlags {
  EvalFlags eval;
  std::vector<int> m_list = {2, 3, 4, 5, 6, 7, 8, 16, 32, 64};
  std::vector<int> k_list = {3};
  std::vector<std::string> metric_list = {"cosine"};
  std::vector<std::string> feature_list = {"probability"};
  std::string grid_path;
  std::string out_dir;
};

int run_ablate_command(const AblateFlags& flags) {
  const TaskSpec task = load_task_config(flags.eval.task_path);
  if (flags.eval.train_path.empty())
    throw Error("--train is required for ablate");
  const Dataset train = load_dataset(flags.eval.train_path, task, Split::train);
  const Dataset test = load_dataset(flags.eval.test_path, task, Split::test);
  auto backend = build_backend(flags.eval.backend);

  AblationGrid grid;
  grid.m_values = flags.m_list;
  grid.k_values = flags.k_list;
  for (const auto& name : flags.metric_list)
    grid.metrics.push_back(parse_metric(name));
  for (const auto& name : flags.feature_list)
    grid.feature_kinds.push_back(parse_feature_kind(name));
  grid.templates = {task.template_text};
  grid.verbalizers = {task.verbalizer};
  if (!flags.grid_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(flags.grid_path));
    } catch (const nlohmann::json::exception& e) {
      throw Error(flags.grid_path + ": malformed grid JSON: " + e.what());
    }
    if (j.contains("templates"))
      grid.templates = j.at("templates").get<std::vector<std::string>>();
    if (j.contains("verbalizers"))
      grid.verbalizers =
          j.at("verbalizers")
              .get<std::vector<std::map<std::string, std::string>>>();
  }

  RunConfig base;
  base.task = task;
  base.model_id = backend->model_id();
  base.method = parse_method(flags.eval.method);
  base.num_runs = flags.eval.num_runs;
  base.seed_base = flags.eval.seed_base;
  base.icl_separator = flags.eval.icl_separator;

  const auto results = run_ablation(grid, base, train, test, *backend);
  write_ablation_outputs(results, grid, flags.out_dir);

  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    std::cout << "point " << i << ": m=" << r.point.m << " k=" << r.point.k
              << " metric=" << to_string(r.point.metric)
              << " feature=" << to_string(r.point.feature_kind);
    if (grid.templates.size() > 1)
      std::cout << " template#" << r.point.template_idx;
    if (grid.verbalizers.size() > 1)
      std::cout << " verbalizer#" << r.point.verbalizer_idx;
    if (r.report) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), " -> %.1f/%.1f/%.1f",
                    r.report->mean * 100.0, r.report->min * 100.0,
                    r.report->std_dev * 100.0);
      std::cout << buf << "\n";
    } else {
      std::cout << " -> error: " << r.error << "\n";
    }
  }
  std::cout << results.size() << " grid points written to " << flags.out_dir
            << "\n";
  return 0;
}

struct ScoreFlags {
  std::string task_path;
  std::string data_path;
  std::string feature = "probability";
  std::string out_path;
  BackendFlags backend;
};

int run_score_command(const ScoreFlags& flags) {
  const TaskSpec task = load_task_config(flags.task_path);
  const Dataset dataset = load_dataset(flags.data_path, task, Split::train);
  auto backend = build_backend(flags.backend);
  const auto features = extract_features(task, dataset, *backend,
                                         parse_feature_kind(flags.feature));
  if (!flags.out_path.empty()) {
    write_feature_csv(task, dataset, features, flags.out_path);
    std::cout << "features written to " << flags.out_path << "\n";
  }
  std::cout << "scored " << features.size() << " examples ("
            << task.labels.size() << " candidates each)\n";
  return 0;
}

int run_scatter_command(const ScoreFlags& flags) {
  const TaskSpec task = load_task_config(flags.task_path);
  const Dataset dataset = load_dataset(flags.data_path, task, Split::train);
  auto backend = build_backend(flags.backend);
  const auto features = extract_features(task, dataset, *backend,
                                         parse_feature_kind(flags.feature));
  emit_scatter(task, dataset, features, flags.out_path);
  std::cout << "scatter data for " << features.size() << " examples written to "
            << flags.out_path << "\n";
  return 0;
}

struct SyntheticFlags {
  std::vector<double> angles;
  double noise = 3.0;
  std::vector<double> radius = {0.05, 0.40};
  int n = 200;
  int train_per_class = 64;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int run_make_synthetic_command(const SyntheticFlags& flags) {
  SyntheticParams params;
  params.num_labels = static_cast<int>(flags.angles.size());
  params.class_angles_deg = flags.angles;
  params.angle_noise_deg = flags.noise;
  if (flags.radius.size() != 2) throw Error("--radius expects lo,hi");
  params.radius_lo = flags.radius[0];
  params.radius_hi = flags.radius[1];
  params.seed = flags.seed;
  params.validate();

  if (flags.n < params.num_labels || flags.n % params.num_labels != 0)
    throw Error("--n must be a positive multiple of the number of classes");
  const int test_per_class = flags.n / params.num_labels;
  if (flags.train_per_class < 1) throw Error("--train-per-class must be >= 1");

  const auto fixture = make_synthetic_task(params, flags.train_per_class);
  const Dataset test = make_synthetic_dataset(
      params, flags.train_per_class, flags.train_per_class + test_per_class,
      Split::test);

  std::error_code ec;
  fs::create_directories(flags.out_dir, ec);
  if (ec) throw Error("cannot create output directory " + flags.out_dir);
  const auto dir = fs::path(flags.out_dir);

  write_text_file((dir / "task.json").string(), task_to_json_text(fixture.task));
  write_text_file((dir / "params.json").string(),
                  synthetic_params_to_json_text(params));
  save_dataset_jsonl(fixture.dataset, (dir / "train.jsonl").string());
  save_dataset_jsonl(test, (dir / "test.jsonl").string());

  std::cout << "synthetic fixture written to " << flags.out_dir << "\n"
            << "  task.json    " << fixture.task.labels.size() << " labels\n"
            << "  params.json  seed " << params.seed << "\n"
            << "  train.jsonl  " << fixture.dataset.examples.size()
            << " examples\n"
            << "  test.jsonl   " << test.examples.size() << " examples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bias-kNN: few-shot text classification from biased verbalizer "
               "probabilities"};
  app.require_subcommand(1);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand(
      "eval", "seeded m-shot evaluation (mean/min/std accuracy)");
  add_eval_flags(eval_cmd, eval_flags, /*with_method=*/true);

  EvalFlags baseline_flags;
  auto* baseline_cmd =
      app.add_subcommand("baseline", "run a reference classifier");
  baseline_cmd->add_option("--kind", baseline_flags.method, "zero-lm | raw-icl")
      ->required();
  add_eval_flags(baseline_cmd, baseline_flags, /*with_method=*/false);

  AblateFlags ablate_flags;
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "sweep m/k/metric/feature (and template/verbalizer) grids");
  add_eval_flags(ablate_cmd, ablate_flags.eval, /*with_method=*/true);
  ablate_cmd->add_option("--m-list", ablate_flags.m_list, "m grid values")
      ->delimiter(',');
  ablate_cmd->add_option("--k-list", ablate_flags.k_list, "k grid values")
      ->delimiter(',');
  ablate_cmd
      ->add_option("--metric-list", ablate_flags.metric_list,
                   "distance metric grid")
      ->delimiter(',');
  ablate_cmd
      ->add_option("--feature-list", ablate_flags.feature_list,
                   "feature kind grid")
      ->delimiter(',');
  ablate_cmd->add_option(
      "--grid", ablate_flags.grid_path,
      "JSON with optional \"templates\" and \"verbalizers\" axes");
  ablate_cmd
      ->add_option("--out-dir", ablate_flags.out_dir,
                   "directory for per-point reports and index.csv")
      ->required();

  ScoreFlags score_flags;
  auto* score_cmd = app.add_subcommand(
      "score", "extract bias feature vectors; dump CSV and/or fill a cache");
  score_cmd->add_option("--task", score_flags.task_path, "task config JSON")
      ->required();
  score_cmd->add_option("--data", score_flags.data_path, "dataset (JSONL or CSV)")
      ->required();
  score_cmd->add_option("--feature", score_flags.feature, "probability | logit");
  score_cmd->add_option("--out", score_flags.out_path, "feature CSV path");
  add_backend_flags(score_cmd, score_flags.backend);

  ScoreFlags scatter_flags;
  auto* scatter_cmd = app.add_subcommand(
      "scatter", "emit example_id,gold_label,p0,p1 rows for the bias plot");
  scatter_cmd->add_option("--task", scatter_flags.task_path, "task config JSON")
      ->required();
  scatter_cmd
      ->add_option("--data", scatter_flags.data_path, "dataset (JSONL or CSV)")
      ->required();
  scatter_cmd->add_option("--feature", scatter_flags.feature,
                          "probability | logit");
  scatter_cmd->add_option("--out", scatter_flags.out_path, "scatter CSV path")
      ->required();
  add_backend_flags(scatter_cmd, scatter_flags.backend);

  SyntheticFlags synthetic_flags;
  auto* synthetic_cmd = app.add_subcommand(
      "make-synthetic", "generate the planted-bias synthetic fixture");
  synthetic_cmd
      ->add_option("--angles", synthetic_flags.angles,
                   "class angles in degrees, e.g. 10,30")
      ->delimiter(',')
      ->required();
  synthetic_cmd->add_option("--noise", synthetic_flags.noise,
                            "angular noise sigma in degrees");
  synthetic_cmd
      ->add_option("--radius", synthetic_flags.radius, "radius range lo,hi")
      ->delimiter(',');
  synthetic_cmd->add_option("--n", synthetic_flags.n,
                            "total test examples (balanced across classes)");
  synthetic_cmd->add_option("--train-per-class",
                            synthetic_flags.train_per_class,
                            "train examples per class");
  synthetic_cmd->add_option("--seed", synthetic_flags.seed, "generator seed");
  synthetic_cmd
      ->add_option("--out-dir", synthetic_flags.out_dir, "output directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*eval_cmd) return run_eval_command(eval_flags);
    if (*baseline_cmd) return run_eval_command(baseline_flags);
    if (*ablate_cmd) return run_ablate_command(ablate_flags);
    if (*score_cmd) return run_score_command(score_flags);
    if (*scatter_cmd) return run_scatter_command(scatter_flags);
    if (*synthetic_cmd) return run_make_synthetic_command(synthetic_flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
