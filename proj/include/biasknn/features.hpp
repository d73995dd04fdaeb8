#pragma once

#include <string>
#include <vector>

#include "biasknn/backend.hpp"
#include "biasknn/task.hpp"

namespace biasknn {

enum class FeatureKind { probability, logit };

FeatureKind parse_feature_kind(const std::string& name);
std::string to_string(FeatureKind kind);

// The bias vector: one verbalizer score per label, in label order. Raw
// model outputs, deliberately not renormalized over the label set --
// the magnitude and direction of the bias are the feature.
struct FeatureVector {
  std::vector<double> values;
  FeatureKind kind = FeatureKind::probability;
  std::string example_id;
};

FeatureVector extract_feature(const TaskSpec& task, const Example& example,
                              Backend& backend, FeatureKind kind);

// Batch form; positionally aligned with dataset.examples.
std::vector<FeatureVector> extract_features(const TaskSpec& task,
                                            const Dataset& dataset,
                                            Backend& backend, FeatureKind kind);

// Feature dump: CSV with header "example_id,label,<label0>,<label1>,...".
void write_feature_csv(const TaskSpec& task, const Dataset& dataset,
                       const std::vector<FeatureVector>& features,
                       const std::string& path);

}  // namespace biasknn
