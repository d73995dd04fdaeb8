#include "biasknn/backend.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "biasknn/rng.hpp"
#include "util.hpp"

namespace biasknn {

using nlohmann::json;

namespace {

constexpr double kProbClipLo = 1e-6;
constexpr double kProbClipHi = 1.0 - 1e-6;
constexpr double kDegToRad = 0.017453292519943295;

}  // namespace

void ScoreRequest::validate() const {
  if (candidates.empty()) throw Error("score request has no candidates");
  std::set<std::string> unique(candidates.begin(), candidates.end());
  if (unique.size() != candidates.size())
    throw Error("score request candidates must be pairwise distinct");
}

void SyntheticParams::validate() const {
  if (num_labels < 2) throw Error("synthetic params: num_labels must be >= 2");
  if (class_angles_deg.size() != static_cast<std::size_t>(num_labels))
    throw Error("synthetic params: need one class angle per label");
  std::set<double> unique(class_angles_deg.begin(), class_angles_deg.end());
  if (unique.size() != class_angles_deg.size())
    throw Error("synthetic params: class angles must be pairwise distinct");
  if (angle_noise_deg < 0.0)
    throw Error("synthetic params: angle noise must be >= 0");
  if (!(radius_lo > 0.0 && radius_lo < radius_hi))
    throw Error("synthetic params: radius range must satisfy 0 < lo < hi");
}

void BackendConfig::validate() const {
  if (max_in_flight < 1) throw Error("backend config: max_in_flight must be >= 1");
  switch (kind) {
    case BackendKind::http:
      if (endpoint.empty()) throw Error("backend config: http kind requires endpoint");
      if (!cache_path.empty() || synthetic_params)
        throw Error("backend config: http kind takes only an endpoint");
      break;
    case BackendKind::cache_backed:
      if (cache_path.empty())
        throw Error("backend config: cache-backed kind requires cache_path");
      if (!endpoint.empty() || synthetic_params)
        throw Error("backend config: cache-backed kind takes only a cache_path");
      break;
    case BackendKind::synthetic:
      if (!synthetic_params)
        throw Error("backend config: synthetic kind requires synthetic_params");
      if (!endpoint.empty() || !cache_path.empty())
        throw Error("backend config: synthetic kind takes only synthetic_params");
      synthetic_params->validate();
      break;
  }
}

SyntheticParams synthetic_params_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed synthetic params JSON: ") + e.what());
  }
  SyntheticParams params;
  try {
    params.num_labels = j.at("num_labels").get<int>();
    params.class_angles_deg = j.at("class_angles_deg").get<std::vector<double>>();
    params.angle_noise_deg = j.at("angle_noise_deg").get<double>();
    params.radius_lo = j.at("radius_lo").get<double>();
    params.radius_hi = j.at("radius_hi").get<double>();
    params.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed synthetic params: ") + e.what());
  }
  params.validate();
  return params;
}

SyntheticParams load_synthetic_params(const std::string& path) {
  try {
    return synthetic_params_from_json_text(detail::read_file(path));
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string synthetic_params_to_json_text(const SyntheticParams& params) {
  json j;
  j["num_labels"] = params.num_labels;
  j["class_angles_deg"] = params.class_angles_deg;
  j["angle_noise_deg"] = params.angle_noise_deg;
  j["radius_lo"] = params.radius_lo;
  j["radius_hi"] = params.radius_hi;
  j["seed"] = params.seed;
  return j.dump(2) + "\n";
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 computation failed");
  static const char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

// --- score_batch -----------------------------------------------------------

std::vector<std::vector<CandidateScore>> Backend::score_batch(
    const std::vector<ScoreRequest>& reqs) {
  std::vector<std::vector<CandidateScore>> results(reqs.size());
  if (reqs.empty()) return results;

  const int workers =
      std::min<int>(max_in_flight_, static_cast<int>(reqs.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      try {
        results[i] = score(reqs[i]);
      } catch (const std::exception& e) {
        throw BatchError(i, e.what());
      }
    }
    return results;
  }

  // Every request runs regardless of other failures; afterwards the
  // failure with the smallest index is reported. Keeps the error (and the
  // results) independent of scheduling.
  std::vector<std::string> errors(reqs.size());
  std::vector<char> failed(reqs.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= reqs.size()) return;
      try {
        results[i] = score(reqs[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        failed[i] = 1;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < reqs.size(); ++i)
    if (failed[i]) throw BatchError(i, errors[i]);
  return results;
}

// --- synthetic backend ------------------------------------------------------

std::vector<double> synthetic_probabilities(const SyntheticParams& params,
                                            int class_idx, int universe_idx) {
  params.validate();
  if (class_idx < 0 || class_idx >= params.num_labels)
    throw Error("synthetic class index out of range: " +
                std::to_string(class_idx));
  SplitMix64 gen(combine(combine(combine(params.seed, kStreamSynthetic),
                                 static_cast<std::uint64_t>(class_idx)),
                         static_cast<std::uint64_t>(universe_idx)));
  const double r =
      params.radius_lo + (params.radius_hi - params.radius_lo) * gen.next_double();
  const double theta_deg = params.class_angles_deg[static_cast<std::size_t>(class_idx)] +
                           truncated_gaussian(gen, params.angle_noise_deg);
  const double theta = theta_deg * kDegToRad;
  auto clip = [](double p) { return std::min(std::max(p, kProbClipLo), kProbClipHi); };
  std::vector<double> probs(static_cast<std::size_t>(params.num_labels), kProbClipLo);
  probs[0] = clip(r * std::cos(theta));
  probs[1] = clip(r * std::sin(theta));
  return probs;
}

namespace {

std::string synthetic_example_id(int class_idx, int universe_idx) {
  return "syn-c" + std::to_string(class_idx) + "-" + std::to_string(universe_idx);
}

// Recovers (class, index) from the last "syn-c<digits>-<digits>" in the
// prompt. ICL prompts carry several ids; the query example's prompt
// segment comes last.
std::pair<int, int> parse_synthetic_id(const std::string& prompt) {
  std::size_t pos = prompt.rfind("syn-c");
  while (pos != std::string::npos) {
    std::size_t i = pos + 5;
    std::size_t class_end = i;
    while (class_end < prompt.size() && std::isdigit(static_cast<unsigned char>(prompt[class_end])))
      ++class_end;
    if (class_end > i && class_end < prompt.size() && prompt[class_end] == '-') {
      std::size_t j = class_end + 1;
      std::size_t idx_end = j;
      while (idx_end < prompt.size() && std::isdigit(static_cast<unsigned char>(prompt[idx_end])))
        ++idx_end;
      if (idx_end > j)
        return {std::stoi(prompt.substr(i, class_end - i)),
                std::stoi(prompt.substr(j, idx_end - j))};
    }
    if (pos == 0) break;
    pos = prompt.rfind("syn-c", pos - 1);
  }
  throw Error("synthetic backend: prompt carries no syn-c<class>-<index> id");
}

class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(const SyntheticParams& params, const std::string& model_id,
                   int max_in_flight)
      : Backend(max_in_flight), params_(params) {
    model_id_ = model_id;
  }

  std::vector<CandidateScore> score(const ScoreRequest& req) override {
    req.validate();
    if (req.candidates.size() != static_cast<std::size_t>(params_.num_labels))
      throw Error("synthetic backend expects " +
                  std::to_string(params_.num_labels) + " candidates, got " +
                  std::to_string(req.candidates.size()));
    const auto [class_idx, universe_idx] = parse_synthetic_id(req.prompt);
    const auto probs = synthetic_probabilities(params_, class_idx, universe_idx);
    std::vector<CandidateScore> scores;
    scores.reserve(req.candidates.size());
    for (std::size_t i = 0; i < req.candidates.size(); ++i) {
      const double p = probs[i];
      scores.push_back(CandidateScore{req.candidates[i], std::log(p),
                                      std::log(p) - std::log(1.0 - p)});
    }
    return scores;
  }

 private:
  SyntheticParams params_;
};

// --- cache ------------------------------------------------------------------

std::string cache_key(const std::string& model, const std::string& prompt_sha,
                      const std::string& candidate) {
  std::string key = model;
  key += '\x1f';
  key += prompt_sha;
  key += '\x1f';
  key += candidate;
  return key;
}

struct CachedScore {
  double logprob = 0.0;
  std::optional<double> logit;
};

bool is_hex64(const std::string& s) {
  if (s.size() != 64) return false;
  for (char c : s)
    if (!std::isxdigit(static_cast<unsigned char>(c)) ||
        (std::isalpha(static_cast<unsigned char>(c)) &&
         std::isupper(static_cast<unsigned char>(c))))
      return false;
  return true;
}

std::unordered_map<std::string, CachedScore> load_cache_file(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open cache file: " + path);
  std::unordered_map<std::string, CachedScore> map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string origin = path + ": line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(origin + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw Error(origin + ": record must be an object");
    for (const char* key : {"model", "prompt_sha256", "candidate", "logprob"})
      if (!j.contains(key))
        throw Error(origin + ": record missing \"" + key + "\"");
    std::string model, sha, candidate;
    CachedScore score;
    try {
      model = j.at("model").get<std::string>();
      sha = j.at("prompt_sha256").get<std::string>();
      candidate = j.at("candidate").get<std::string>();
      score.logprob = j.at("logprob").get<double>();
      if (j.contains("logit") && !j.at("logit").is_null())
        score.logit = j.at("logit").get<double>();
    } catch (const json::exception& e) {
      throw Error(origin + ": " + e.what());
    }
    if (!is_hex64(sha))
      throw Error(origin + ": prompt_sha256 must be 64 lowercase hex digits");
    if (!(score.logprob <= 0.0) || !std::isfinite(score.logprob))
      throw Error(origin + ": logprob must be finite and <= 0");
    auto [it, inserted] = map.insert_or_assign(cache_key(model, sha, candidate), score);
    if (!inserted)
      std::cerr << "warning: " << origin << ": duplicate cache key for (model="
                << model << ", prompt_sha256=" << sha << ", candidate=\""
                << candidate << "\"); last record wins\n";
  }
  return map;
}

std::mutex g_cache_write_mutex;

class CacheBackend final : public Backend {
 public:
  CacheBackend(const std::string& path, int max_in_flight)
      : Backend(max_in_flight), map_(load_cache_file(path)), path_(path) {}

  std::vector<CandidateScore> score(const ScoreRequest& req) override {
    req.validate();
    const std::string sha = sha256_hex(req.prompt);
    std::vector<CandidateScore> scores;
    scores.reserve(req.candidates.size());
    for (const auto& candidate : req.candidates) {
      auto it = map_.find(cache_key(req.model_id, sha, candidate));
      if (it == map_.end())
        throw Error("cache miss in " + path_ + " for (model=" + req.model_id +
                    ", prompt_sha256=" + sha + ", candidate=\"" + candidate +
                    "\")");
      scores.push_back(CandidateScore{candidate, it->second.logprob, it->second.logit});
    }
    return scores;
  }

 private:
  const std::unordered_map<std::string, CachedScore> map_;  // read-only after load
  std::string path_;
};

// --- HTTP -------------------------------------------------------------------

struct ParsedEndpoint {
  std::string base;  // scheme://host:port
  std::string path_prefix;
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos)
    throw Error("endpoint must look like http://host:port[/prefix], got: " +
                endpoint);
  const auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, ""};
  std::string prefix = endpoint.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {endpoint.substr(0, path_start), prefix};
}

class HttpBackend final : public Backend {
 public:
  HttpBackend(const std::string& endpoint, const std::string& model_id,
              int max_in_flight)
      : Backend(max_in_flight), endpoint_(parse_endpoint(endpoint)) {
    model_id_ = model_id;
  }

  std::vector<CandidateScore> score(const ScoreRequest& req) override {
    req.validate();
    json body;
    body["model"] = req.model_id;
    body["prompt"] = req.prompt;
    body["candidates"] = req.candidates;

    httplib::Client client(endpoint_.base);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(300, 0);
    auto res = client.Post(endpoint_.path_prefix + "/score", body.dump(),
                           "application/json");
    if (!res)
      throw Error("endpoint unreachable: " + endpoint_.base + ": " +
                  httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error("backend returned status " + std::to_string(res->status) +
                  " for " + endpoint_.base);

    json j;
    try {
      j = json::parse(res->body);
    } catch (const json::exception& e) {
      throw Error(std::string("malformed backend response: ") + e.what());
    }
    if (!j.contains("scores") || !j.at("scores").is_array())
      throw Error("malformed backend response: missing \"scores\" array");
    const auto& arr = j.at("scores");
    if (arr.size() != req.candidates.size())
      throw Error("candidate count mismatch (requested " +
                  std::to_string(req.candidates.size()) + ", got " +
                  std::to_string(arr.size()) + ")");

    std::vector<CandidateScore> scores;
    scores.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
      CandidateScore score;
      try {
        score.candidate = arr[i].at("candidate").get<std::string>();
        score.logprob = arr[i].at("logprob").get<double>();
        if (arr[i].contains("logit") && !arr[i].at("logit").is_null())
          score.logit = arr[i].at("logit").get<double>();
      } catch (const json::exception& e) {
        throw Error(std::string("malformed backend response: ") + e.what());
      }
      if (score.candidate != req.candidates[i])
        throw Error("backend response out of order: expected candidate \"" +
                    req.candidates[i] + "\" at position " + std::to_string(i) +
                    ", got \"" + score.candidate + "\"");
      if (!std::isfinite(score.logprob) || score.logprob > 0.0)
        throw Error("backend returned invalid logprob " +
                    detail::format_double(score.logprob) + " for candidate \"" +
                    score.candidate + "\"");
      scores.push_back(std::move(score));
    }
    return scores;
  }

 private:
  ParsedEndpoint endpoint_;
};

// --- write-through composition ---------------------------------------------

class CachingBackend final : public Backend {
 public:
  CachingBackend(std::unique_ptr<Backend> inner, const std::string& path)
      : Backend(inner->max_in_flight()), inner_(std::move(inner)), path_(path) {
    model_id_ = inner_->model_id();
    std::ifstream probe(path);
    if (probe.good()) map_ = load_cache_file(path);
  }

  std::vector<CandidateScore> score(const ScoreRequest& req) override {
    req.validate();
    const std::string sha = sha256_hex(req.prompt);
    {
      std::lock_guard lock(mutex_);
      std::vector<CandidateScore> scores;
      scores.reserve(req.candidates.size());
      bool all_hit = true;
      for (const auto& candidate : req.candidates) {
        auto it = map_.find(cache_key(req.model_id, sha, candidate));
        if (it == map_.end()) {
          all_hit = false;
          break;
        }
        scores.push_back(CandidateScore{candidate, it->second.logprob, it->second.logit});
      }
      if (all_hit) return scores;
    }
    auto scores = inner_->score(req);
    std::lock_guard lock(mutex_);
    write_cache(path_, req, scores);
    for (const auto& score : scores)
      map_.insert_or_assign(cache_key(req.model_id, sha, score.candidate),
                            CachedScore{score.logprob, score.logit});
    return scores;
  }

 private:
  std::unique_ptr<Backend> inner_;
  std::string path_;
  std::unordered_map<std::string, CachedScore> map_;
  std::mutex mutex_;
};

}  // namespace

void write_cache(const std::string& path, const ScoreRequest& req,
                 const std::vector<CandidateScore>& scores) {
  if (scores.size() != req.candidates.size())
    throw Error("write_cache: scores not aligned with request candidates");
  const std::string sha = sha256_hex(req.prompt);
  std::string payload;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].candidate != req.candidates[i])
      throw Error("write_cache: scores not aligned with request candidates");
    json j;
    j["model"] = req.model_id;
    j["prompt_sha256"] = sha;
    j["candidate"] = scores[i].candidate;
    j["logprob"] = scores[i].logprob;
    if (scores[i].logit) j["logit"] = *scores[i].logit;
    else j["logit"] = nullptr;
    payload += j.dump();
    payload += '\n';
  }
  std::lock_guard lock(g_cache_write_mutex);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot open cache file for append: " + path);
  out << payload;
  out.flush();
  if (!out) throw Error("cache write failed: " + path);
}

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case BackendKind::http:
      return std::make_unique<HttpBackend>(cfg.endpoint, cfg.model_id,
                                           cfg.max_in_flight);
    case BackendKind::cache_backed: {
      auto backend = std::make_unique<CacheBackend>(cfg.cache_path, cfg.max_in_flight);
      backend->set_model_id(cfg.model_id);
      return backend;
    }
    case BackendKind::synthetic:
      return std::make_unique<SyntheticBackend>(*cfg.synthetic_params,
                                                cfg.model_id.empty() ? "synthetic"
                                                                     : cfg.model_id,
                                                cfg.max_in_flight);
  }
  throw Error("unknown backend kind");
}

std::unique_ptr<Backend> make_caching_backend(std::unique_ptr<Backend> inner,
                                              const std::string& cache_path) {
  if (!inner) throw Error("caching backend requires an inner backend");
  return std::make_unique<CachingBackend>(std::move(inner), cache_path);
}

SyntheticFixture make_synthetic_task(const SyntheticParams& params,
                                     int n_per_class) {
  params.validate();
  if (n_per_class < 1) throw Error("make_synthetic_task: n_per_class must be >= 1");

  TaskSpec task;
  task.name = "synthetic";
  task.template_text = "Input: [X] Label: [Y]";
  task.input_fields = {"text"};
  if (params.num_labels == 2) {
    task.labels = {"Positive", "Negative"};
  } else {
    for (int c = 0; c < params.num_labels; ++c)
      task.labels.push_back("Class" + std::to_string(c));
  }
  for (const auto& label : task.labels) task.verbalizer[label] = label;
  task.validate();

  BackendConfig backend;
  backend.kind = BackendKind::synthetic;
  backend.model_id = "synthetic";
  backend.synthetic_params = params;

  return SyntheticFixture{task, make_synthetic_dataset(params, 0, n_per_class, Split::train),
                          backend};
}

Dataset make_synthetic_dataset(const SyntheticParams& params, int lo_index,
                               int hi_index, Split split) {
  params.validate();
  if (lo_index < 0 || hi_index <= lo_index)
    throw Error("make_synthetic_dataset: need 0 <= lo < hi");
  std::vector<std::string> labels;
  if (params.num_labels == 2) {
    labels = {"Positive", "Negative"};
  } else {
    for (int c = 0; c < params.num_labels; ++c)
      labels.push_back("Class" + std::to_string(c));
  }
  Dataset dataset;
  dataset.split = split;
  for (int c = 0; c < params.num_labels; ++c) {
    for (int j = lo_index; j < hi_index; ++j) {
      Example example;
      example.id = synthetic_example_id(c, j);
      example.fields["text"] = example.id;
      example.gold_label = labels[static_cast<std::size_t>(c)];
      dataset.examples.push_back(std::move(example));
    }
  }
  return dataset;
}

}  // namespace biasknn
