#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasknn/task.hpp"

namespace biasknn {

struct ScoreRequest {
  std::string model_id;
  std::string prompt;
  std::vector<std::string> candidates;  // typically " " + verbalizer word

  void validate() const;
};

struct CandidateScore {
  std::string candidate;
  double logprob = 0.0;               // ln p of the candidate's first token
  std::optional<double> logit;        // pre-softmax score, if the backend has it
};

// Parameters of the deterministic synthetic backend. Class c's examples
// score at angle class_angles_deg[c] (plus truncated Gaussian noise) in
// the (p0, p1) plane, with radius drawn from radius_range. Models the
// planted-bias geometry of a biased binary classifier.
struct SyntheticParams {
  int num_labels = 2;
  std::vector<double> class_angles_deg;
  double angle_noise_deg = 0.0;
  double radius_lo = 0.05;
  double radius_hi = 0.40;
  std::uint64_t seed = 0;

  void validate() const;
};

SyntheticParams synthetic_params_from_json_text(const std::string& text);
SyntheticParams load_synthetic_params(const std::string& path);
std::string synthetic_params_to_json_text(const SyntheticParams& params);

enum class BackendKind { http, cache_backed, synthetic };

struct BackendConfig {
  BackendKind kind = BackendKind::synthetic;
  std::string endpoint;    // required iff kind == http
  std::string cache_path;  // required iff kind == cache_backed
  std::string model_id;
  int max_in_flight = 4;
  std::optional<SyntheticParams> synthetic_params;

  void validate() const;
};

// Uniform scoring interface. score() must be safe to call concurrently;
// score_batch() issues up to max_in_flight requests in parallel and
// returns results positionally aligned with the input, independent of
// completion order.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::vector<CandidateScore> score(const ScoreRequest& req) = 0;
  std::vector<std::vector<CandidateScore>> score_batch(
      const std::vector<ScoreRequest>& reqs);

  int max_in_flight() const { return max_in_flight_; }
  const std::string& model_id() const { return model_id_; }
  void set_model_id(std::string id) { model_id_ = std::move(id); }

 protected:
  explicit Backend(int max_in_flight) : max_in_flight_(max_in_flight) {}
  int max_in_flight_;
  std::string model_id_;
};

// Thrown by score_batch; index identifies the first failing request.
struct BatchError : Error {
  BatchError(std::size_t request_index, const std::string& message)
      : Error(message), index(request_index) {}
  std::size_t index;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg);

// Read-through/write-through composition: hits the cache file first and
// forwards misses to `inner`, appending their scores to the cache.
std::unique_ptr<Backend> make_caching_backend(std::unique_ptr<Backend> inner,
                                              const std::string& cache_path);

// Appends one JSONL record per candidate, keyed by
// (model, sha256(prompt), candidate). Safe to re-append identical
// payloads; on read, the last record for a key wins.
void write_cache(const std::string& path, const ScoreRequest& req,
                 const std::vector<CandidateScore>& scores);

std::string sha256_hex(std::string_view data);

// The generator formula behind the synthetic backend, exposed so tests
// can check returned scores against a direct evaluation.
std::vector<double> synthetic_probabilities(const SyntheticParams& params,
                                            int class_idx, int universe_idx);

struct SyntheticFixture {
  TaskSpec task;
  Dataset dataset;
  BackendConfig backend;
};

// Builds a planted-class task: n_per_class examples per label whose ids
// encode (class, index) so the backend can score them deterministically.
SyntheticFixture make_synthetic_task(const SyntheticParams& params,
                                     int n_per_class);

// Slice of the synthetic example universe: per-class indices [lo, hi).
// Slices with disjoint ranges yield id-disjoint datasets, which is how
// train/test splits are produced.
Dataset make_synthetic_dataset(const SyntheticParams& params, int lo_index,
                               int hi_index, Split split);

}  // namespace biasknn
