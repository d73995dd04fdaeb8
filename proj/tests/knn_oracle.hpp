#pragma once

// Exhaustive nearest-neighbor oracle, written against the distance
// formulas and tie rule as specified, independent of the library's
// query path. Used to cross-check query_neighbors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace knn_oracle {

struct OracleNeighbor {
  std::size_t index;
  double distance;
};

inline double oracle_distance(const std::string& metric,
                              const std::vector<double>& a,
                              const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::runtime_error("oracle: dim mismatch");
  if (metric == "cosine") {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  }
  if (metric == "euclidean") {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      sum += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sum);
  }
  if (metric == "manhattan") {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::fabs(a[i] - b[i]);
    return sum;
  }
  if (metric == "chebyshev") {
    double best = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      best = std::max(best, std::fabs(a[i] - b[i]));
    return best;
  }
  throw std::runtime_error("oracle: unknown metric " + metric);
}

// All entries sorted by (distance, index) ascending, first k returned.
inline std::vector<OracleNeighbor> oracle_knn(
    const std::vector<std::vector<double>>& entries,
    const std::vector<double>& query, std::size_t k, const std::string& metric) {
  std::vector<OracleNeighbor> all;
  all.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    all.push_back(OracleNeighbor{i, oracle_distance(metric, entries[i], query)});
  std::stable_sort(all.begin(), all.end(),
                   [](const OracleNeighbor& x, const OracleNeighbor& y) {
                     return x.distance < y.distance;
                   });
  all.resize(k);
  return all;
}

}  // namespace knn_oracle
