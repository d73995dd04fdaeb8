#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biasknn/features.hpp"
#include "biasknn/task.hpp"

namespace biasknn {

enum class DistanceMetric { cosine, euclidean, manhattan, chebyshev };

DistanceMetric parse_metric(const std::string& name);
std::string to_string(DistanceMetric metric);
const std::vector<DistanceMetric>& all_metrics();

// cosine = 1 - a.b/(|a||b|); the others are the usual Lp forms.
// Cosine requires both norms > 1e-12.
double distance(DistanceMetric metric, std::span<const double> a,
                std::span<const double> b);

struct DatastoreEntry {
  FeatureVector feature;
  std::string label;
  std::string example_id;
};

// m labeled bias vectors per class, sampled with a seeded generator.
// Immutable after build; queries are concurrency-safe.
struct Datastore {
  std::vector<DatastoreEntry> entries;  // ordered by (label order, sample order)
  std::string task_name;
  FeatureKind kind = FeatureKind::probability;
  int shots_per_class = 0;
  std::uint64_t build_seed = 0;
};

struct Neighbor {
  std::size_t entry_index = 0;
  double distance = 0.0;
  std::string label;
};

struct Prediction {
  std::string label;
  std::vector<Neighbor> neighbors;
  std::vector<std::pair<std::string, int>> vote_counts;  // task label order
};

// For each label in task order: candidate indices in dataset order,
// Fisher-Yates shuffled by SplitMix64(combine(seed, label_index)), first
// m taken. Returns dataset indices ordered (label order, sampled order).
// Errors if any label has fewer than m examples.
std::vector<std::size_t> sample_per_class(const TaskSpec& task,
                                          const Dataset& train, int m,
                                          std::uint64_t seed);

Datastore build_datastore(const TaskSpec& task, const Dataset& train,
                          const std::vector<FeatureVector>& features, int m,
                          std::uint64_t seed);

// The k entries nearest to the query, ascending distance, ties broken by
// ascending entry index. k must be in [1, |entries|]; no clamping.
std::vector<Neighbor> query_neighbors(const Datastore& store,
                                      const FeatureVector& query, int k,
                                      DistanceMetric metric);

// Majority vote over the neighbor labels. Ties between labels go to the
// tied label owning the nearest neighbor (smallest distance, then
// smallest entry index).
Prediction majority_vote(const TaskSpec& task,
                         const std::vector<Neighbor>& neighbors);

Prediction predict(const Datastore& store, const FeatureVector& query, int k,
                   DistanceMetric metric, const TaskSpec& task);

void save_datastore(const Datastore& store, const std::string& path);
Datastore load_datastore(const std::string& path);
std::string datastore_to_json_text(const Datastore& store);
Datastore datastore_from_json_text(const std::string& text);

}  // namespace biasknn
