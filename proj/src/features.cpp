#include "biasknn/features.hpp"

#include <cmath>

#include "util.hpp"

namespace biasknn {

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "probability") return FeatureKind::probability;
  if (name == "logit") return FeatureKind::logit;
  throw Error("unknown feature kind \"" + name +
              "\" (expected probability or logit)");
}

std::string to_string(FeatureKind kind) {
  return kind == FeatureKind::probability ? "probability" : "logit";
}

namespace {

FeatureVector feature_from_scores(const TaskSpec& task, const std::string& id,
                                  const std::vector<CandidateScore>& scores,
                                  FeatureKind kind) {
  if (scores.size() != task.labels.size())
    throw Error("example \"" + id + "\": expected " +
                std::to_string(task.labels.size()) + " scores, got " +
                std::to_string(scores.size()));
  FeatureVector feature;
  feature.kind = kind;
  feature.example_id = id;
  feature.values.reserve(scores.size());
  for (const auto& score : scores) {
    if (kind == FeatureKind::probability) {
      const double p = std::exp(score.logprob);
      if (!std::isfinite(p) || p <= 0.0 || p >= 1.0)
        throw Error("example \"" + id + "\": probability feature " +
                    detail::format_double(p) + " outside (0,1)");
      feature.values.push_back(p);
    } else {
      if (!score.logit)
        throw Error("example \"" + id + "\": backend provides no raw logits");
      if (!std::isfinite(*score.logit))
        throw Error("example \"" + id + "\": non-finite logit");
      feature.values.push_back(*score.logit);
    }
  }
  return feature;
}

}  // namespace

FeatureVector extract_feature(const TaskSpec& task, const Example& example,
                              Backend& backend, FeatureKind kind) {
  ScoreRequest req{backend.model_id(), render_prompt(task, example),
                   task.candidates()};
  return feature_from_scores(task, example.id, backend.score(req), kind);
}

std::vector<FeatureVector> extract_features(const TaskSpec& task,
                                            const Dataset& dataset,
                                            Backend& backend, FeatureKind kind) {
  std::vector<ScoreRequest> reqs;
  reqs.reserve(dataset.examples.size());
  const auto candidates = task.candidates();
  for (const auto& example : dataset.examples)
    reqs.push_back(ScoreRequest{backend.model_id(),
                                render_prompt(task, example), candidates});

  std::vector<std::vector<CandidateScore>> batches;
  try {
    batches = backend.score_batch(reqs);
  } catch (const BatchError& e) {
    throw Error("example \"" + dataset.examples[e.index].id + "\": " + e.what());
  }

  std::vector<FeatureVector> features;
  features.reserve(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i)
    features.push_back(feature_from_scores(task, dataset.examples[i].id,
                                           batches[i], kind));
  return features;
}

void write_feature_csv(const TaskSpec& task, const Dataset& dataset,
                       const std::vector<FeatureVector>& features,
                       const std::string& path) {
  if (features.size() != dataset.examples.size())
    throw Error("feature dump: features not aligned with dataset");
  std::string out = "example_id,label";
  for (const auto& label : task.labels) {
    out += ',';
    out += detail::csv_escape(label);
  }
  out += '\n';
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& example = dataset.examples[i];
    out += detail::csv_escape(example.id);
    out += ',';
    if (example.gold_label) out += detail::csv_escape(*example.gold_label);
    for (double v : features[i].values) {
      out += ',';
      out += detail::format_double(v);
    }
    out += '\n';
  }
  detail::write_file(path, out);
}

}  // namespace biasknn
