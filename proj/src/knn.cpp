#include "biasknn/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "biasknn/rng.hpp"
#include "util.hpp"

namespace biasknn {

using nlohmann::json;

DistanceMetric parse_metric(const std::string& name) {
  if (name == "cosine") return DistanceMetric::cosine;
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "manhattan") return DistanceMetric::manhattan;
  if (name == "chebyshev") return DistanceMetric::chebyshev;
  throw Error("unknown distance metric \"" + name +
              "\" (expected cosine, euclidean, manhattan or chebyshev)");
}

std::string to_string(DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::cosine: return "cosine";
    case DistanceMetric::euclidean: return "euclidean";
    case DistanceMetric::manhattan: return "manhattan";
    case DistanceMetric::chebyshev: return "chebyshev";
  }
  throw Error("unknown distance metric");
}

const std::vector<DistanceMetric>& all_metrics() {
  static const std::vector<DistanceMetric> metrics = {
      DistanceMetric::cosine, DistanceMetric::euclidean,
      DistanceMetric::manhattan, DistanceMetric::chebyshev};
  return metrics;
}

double distance(DistanceMetric metric, std::span<const double> a,
                std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw Error("distance: dimension mismatch (" + std::to_string(a.size()) +
                " vs " + std::to_string(b.size()) + ")");
  switch (metric) {
    case DistanceMetric::cosine: {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      constexpr double kNormGuard = 1e-12;
      if (na <= kNormGuard || nb <= kNormGuard)
        throw Error("cosine distance undefined for near-zero-norm vector");
      return 1.0 - dot / (na * nb);
    }
    case DistanceMetric::euclidean: {
      double sum = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
      }
      return std::sqrt(sum);
    }
    case DistanceMetric::manhattan: {
      double sum = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
      return sum;
    }
    case DistanceMetric::chebyshev: {
      double best = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i)
        best = std::max(best, std::abs(a[i] - b[i]));
      return best;
    }
  }
  throw Error("unknown distance metric");
}

std::vector<std::size_t> sample_per_class(const TaskSpec& task,
                                          const Dataset& train, int m,
                                          std::uint64_t seed) {
  if (m < 1) throw Error("sample_per_class: m must be >= 1");
  for (const auto& example : train.examples)
    if (!example.gold_label)
      throw Error("train example \"" + example.id + "\" missing gold label");

  std::vector<std::size_t> picked;
  picked.reserve(task.labels.size() * static_cast<std::size_t>(m));
  for (std::size_t label_idx = 0; label_idx < task.labels.size(); ++label_idx) {
    const auto& label = task.labels[label_idx];
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < train.examples.size(); ++i)
      if (*train.examples[i].gold_label == label) candidates.push_back(i);
    if (candidates.size() < static_cast<std::size_t>(m))
      throw Error("label \"" + label + "\" has " +
                  std::to_string(candidates.size()) + " examples, need m=" +
                  std::to_string(m));
    SplitMix64 gen(combine(seed, static_cast<std::uint64_t>(label_idx)));
    fisher_yates(candidates, gen);
    picked.insert(picked.end(), candidates.begin(),
                  candidates.begin() + static_cast<std::ptrdiff_t>(m));
  }
  return picked;
}

Datastore build_datastore(const TaskSpec& task, const Dataset& train,
                          const std::vector<FeatureVector>& features, int m,
                          std::uint64_t seed) {
  if (features.size() != train.examples.size())
    throw Error("build_datastore: features not aligned with train examples");
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].example_id != train.examples[i].id)
      throw Error("build_datastore: feature " + std::to_string(i) +
                  " belongs to \"" + features[i].example_id +
                  "\", expected \"" + train.examples[i].id + "\"");
    if (features[i].values.size() != task.labels.size())
      throw Error("build_datastore: feature for \"" + features[i].example_id +
                  "\" has wrong dimension");
    if (i > 0 && features[i].kind != features[0].kind)
      throw Error("build_datastore: mixed feature kinds");
  }

  Datastore store;
  store.task_name = task.name;
  store.kind = features.empty() ? FeatureKind::probability : features[0].kind;
  store.shots_per_class = m;
  store.build_seed = seed;
  for (std::size_t idx : sample_per_class(task, train, m, seed)) {
    store.entries.push_back(DatastoreEntry{features[idx],
                                           *train.examples[idx].gold_label,
                                           train.examples[idx].id});
  }
  return store;
}

std::vector<Neighbor> query_neighbors(const Datastore& store,
                                      const FeatureVector& query, int k,
                                      DistanceMetric metric) {
  if (store.entries.empty()) throw Error("query_neighbors: empty datastore");
  if (k < 1 || static_cast<std::size_t>(k) > store.entries.size())
    throw Error("k=" + std::to_string(k) + " out of range for datastore of " +
                std::to_string(store.entries.size()) + " entries");
  if (query.kind != store.kind)
    throw Error("query feature kind (" + to_string(query.kind) +
                ") does not match datastore kind (" + to_string(store.kind) + ")");

  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(store.entries.size());
  for (std::size_t i = 0; i < store.entries.size(); ++i)
    order.emplace_back(
        distance(metric, store.entries[i].feature.values, query.values), i);
  std::sort(order.begin(), order.end());  // ties fall back to entry index

  std::vector<Neighbor> neighbors;
  neighbors.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto& [dist, idx] = order[static_cast<std::size_t>(i)];
    neighbors.push_back(Neighbor{idx, dist, store.entries[idx].label});
  }
  return neighbors;
}

Prediction majority_vote(const TaskSpec& task,
                         const std::vector<Neighbor>& neighbors) {
  if (neighbors.empty()) throw Error("majority_vote: no neighbors");

  std::vector<int> counts(task.labels.size(), 0);
  for (const auto& neighbor : neighbors) {
    const int idx = task.label_index(neighbor.label);
    if (idx < 0)
      throw Error("majority_vote: neighbor label \"" + neighbor.label +
                  "\" not in task");
    ++counts[static_cast<std::size_t>(idx)];
  }
  const int best_count = *std::max_element(counts.begin(), counts.end());

  // Tie rule: among labels at best_count, the one owning the nearest
  // neighbor wins; neighbor ties resolve by entry index.
  std::size_t winner = task.labels.size();
  std::pair<double, std::size_t> winner_key{0.0, 0};
  for (const auto& neighbor : neighbors) {
    const auto idx =
        static_cast<std::size_t>(task.label_index(neighbor.label));
    if (counts[idx] != best_count) continue;
    const std::pair<double, std::size_t> key{neighbor.distance,
                                             neighbor.entry_index};
    if (winner == task.labels.size() || key < winner_key) {
      winner = idx;
      winner_key = key;
    }
  }

  Prediction prediction;
  prediction.label = task.labels[winner];
  prediction.neighbors = neighbors;
  for (std::size_t i = 0; i < task.labels.size(); ++i)
    prediction.vote_counts.emplace_back(task.labels[i], counts[i]);
  return prediction;
}

Prediction predict(const Datastore& store, const FeatureVector& query, int k,
                   DistanceMetric metric, const TaskSpec& task) {
  return majority_vote(task, query_neighbors(store, query, k, metric));
}

std::string datastore_to_json_text(const Datastore& store) {
  json entries = json::array();
  for (const auto& entry : store.entries) {
    json e;
    e["id"] = entry.example_id;
    e["label"] = entry.label;
    e["values"] = entry.feature.values;
    entries.push_back(std::move(e));
  }
  json j;
  j["task"] = store.task_name;
  j["kind"] = to_string(store.kind);
  j["m"] = store.shots_per_class;
  j["seed"] = store.build_seed;
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

Datastore datastore_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed datastore JSON: ") + e.what());
  }
  Datastore store;
  try {
    store.task_name = j.at("task").get<std::string>();
    store.kind = parse_feature_kind(j.at("kind").get<std::string>());
    store.shots_per_class = j.at("m").get<int>();
    store.build_seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      DatastoreEntry entry;
      entry.example_id = e.at("id").get<std::string>();
      entry.label = e.at("label").get<std::string>();
      entry.feature.values = e.at("values").get<std::vector<double>>();
      entry.feature.kind = store.kind;
      entry.feature.example_id = entry.example_id;
      store.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed datastore: ") + e.what());
  }

  if (store.shots_per_class < 1) throw Error("datastore: m must be >= 1");
  if (store.entries.empty()) throw Error("datastore: no entries");
  const std::size_t dim = store.entries.front().feature.values.size();
  std::set<std::string> ids;
  std::map<std::string, int> per_label;
  for (const auto& entry : store.entries) {
    if (entry.feature.values.size() != dim)
      throw Error("datastore: inconsistent feature dimensions");
    for (double v : entry.feature.values) {
      if (!std::isfinite(v)) throw Error("datastore: non-finite feature value");
      if (store.kind == FeatureKind::probability && (v <= 0.0 || v >= 1.0))
        throw Error("datastore: probability feature outside (0,1)");
    }
    if (!ids.insert(entry.example_id).second)
      throw Error("datastore: duplicate example id \"" + entry.example_id + "\"");
    ++per_label[entry.label];
  }
  for (const auto& [label, count] : per_label)
    if (count != store.shots_per_class)
      throw Error("datastore: label \"" + label + "\" has " +
                  std::to_string(count) + " entries, expected m=" +
                  std::to_string(store.shots_per_class));
  return store;
}

void save_datastore(const Datastore& store, const std::string& path) {
  detail::write_file(path, datastore_to_json_text(store));
}

Datastore load_datastore(const std::string& path) {
  try {
    return datastore_from_json_text(detail::read_file(path));
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace biasknn
