#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <thread>

#include "biasknn/backend.hpp"
#include "biasknn/rng.hpp"
#include "helpers.hpp"

using namespace biasknn;
using test_helpers::TempDir;
using test_helpers::fixture_params;
using nlohmann::json;

TEST_CASE("sha256 matches known vectors") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("request and config validation") {
  ScoreRequest req{"m", "p", {}};
  CHECK_THROWS_AS(req.validate(), Error);
  req.candidates = {" A", " A"};
  CHECK_THROWS_AS(req.validate(), Error);
  req.candidates = {" A", " B"};
  CHECK_NOTHROW(req.validate());

  SyntheticParams params = fixture_params();
  params.class_angles_deg = {10.0};
  CHECK_THROWS_AS(params.validate(), Error);
  params = fixture_params();
  params.radius_lo = 0.5;
  params.radius_hi = 0.1;
  CHECK_THROWS_AS(params.validate(), Error);

  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  CHECK_THROWS_AS(cfg.validate(), Error);  // endpoint required
  cfg.kind = BackendKind::cache_backed;
  CHECK_THROWS_AS(cfg.validate(), Error);  // cache_path required
  cfg.kind = BackendKind::synthetic;
  CHECK_THROWS_AS(cfg.validate(), Error);  // params required
  cfg.synthetic_params = fixture_params();
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("synthetic params JSON round trip") {
  const SyntheticParams params = fixture_params();
  const SyntheticParams again =
      synthetic_params_from_json_text(synthetic_params_to_json_text(params));
  CHECK(again.num_labels == params.num_labels);
  CHECK(again.class_angles_deg == params.class_angles_deg);
  CHECK(again.seed == params.seed);
  CHECK(again.radius_hi == params.radius_hi);
}

TEST_CASE("synthetic fixture is deterministic") {
  const auto fixture_a = make_synthetic_task(fixture_params(), 5);
  const auto fixture_b = make_synthetic_task(fixture_params(), 5);
  REQUIRE(fixture_a.dataset.examples.size() == 10);
  for (std::size_t i = 0; i < fixture_a.dataset.examples.size(); ++i) {
    CHECK(fixture_a.dataset.examples[i].id == fixture_b.dataset.examples[i].id);
    CHECK(*fixture_a.dataset.examples[i].gold_label ==
          *fixture_b.dataset.examples[i].gold_label);
  }

  auto backend_a = make_backend(fixture_a.backend);
  auto backend_b = make_backend(fixture_b.backend);
  for (const auto& example : fixture_a.dataset.examples) {
    ScoreRequest req{"synthetic", render_prompt(fixture_a.task, example),
                     fixture_a.task.candidates()};
    const auto scores_a = backend_a->score(req);
    const auto scores_b = backend_b->score(req);
    REQUIRE(scores_a.size() == 2);
    for (std::size_t c = 0; c < scores_a.size(); ++c) {
      CHECK(scores_a[c].logprob == scores_b[c].logprob);  // bit-identical
      CHECK(*scores_a[c].logit == *scores_b[c].logit);
    }
  }

  CHECK_THROWS_AS(make_synthetic_task(fixture_params(), 0), Error);
}

TEST_CASE("synthetic scores follow the planted geometry") {
  const auto params = fixture_params();
  const auto fixture = make_synthetic_task(params, 50);
  auto backend = make_backend(fixture.backend);

  for (std::size_t i = 0; i < fixture.dataset.examples.size(); ++i) {
    const auto& example = fixture.dataset.examples[i];
    ScoreRequest req{"synthetic", render_prompt(fixture.task, example),
                     fixture.task.candidates()};
    const auto scores = backend->score(req);

    // Examples are laid out class-major, 50 per class.
    const int planted = static_cast<int>(i / 50);
    const int universe = static_cast<int>(i % 50);
    const auto probs = synthetic_probabilities(params, planted, universe);

    const double p0 = probs[0], p1 = probs[1];
    CHECK(scores[0].logprob == std::log(p0));  // bit-identical to the formula
    CHECK(scores[1].logprob == std::log(p1));
    CHECK(std::exp(scores[0].logprob) > 0.0);
    CHECK(std::exp(scores[0].logprob) < 1.0);
    // logit = ln(p) - ln(1-p), exactly.
    CHECK(*scores[0].logit == std::log(p0) - std::log(1.0 - p0));
    CHECK(*scores[1].logit == std::log(p1) - std::log(1.0 - p1));

    // Recovered angle stays within the 3-sigma truncation band of the
    // planted class angle.
    const double angle = std::atan2(p1, p0) * 180.0 / 3.14159265358979323846;
    CHECK(std::abs(angle - params.class_angles_deg[planted]) <=
          3.0 * params.angle_noise_deg + 1e-9);
    // Clear bias: argmax always selects the first label.
    CHECK(p0 > p1);
  }
}

TEST_CASE("synthetic probabilities match a direct formula evaluation") {
  // radius pinned to ~0.2, zero noise: p = (0.2 cos 10deg, 0.2 sin 10deg).
  SyntheticParams params = fixture_params();
  params.angle_noise_deg = 0.0;
  params.radius_lo = 0.2;
  params.radius_hi = 0.2 + 1e-9;
  const auto probs = synthetic_probabilities(params, 0, 0);
  CHECK(probs[0] == doctest::Approx(0.1969615506024416).epsilon(1e-6));
  CHECK(probs[1] == doctest::Approx(0.0347296355333861).epsilon(1e-6));

  CHECK_THROWS_AS(synthetic_probabilities(params, 2, 0), Error);
}

TEST_CASE("synthetic backend requires a parsable example id") {
  const auto fixture = make_synthetic_task(fixture_params(), 2);
  auto backend = make_backend(fixture.backend);
  ScoreRequest req{"synthetic", "Review: plain text Sentiment:",
                   fixture.task.candidates()};
  CHECK_THROWS_AS(backend->score(req), Error);

  // In an ICL prompt the trailing (query) id wins.
  ScoreRequest icl{"synthetic",
                   "Input: syn-c1-0 Label: Negative\nInput: syn-c0-1 Label:",
                   fixture.task.candidates()};
  const auto scores = backend->score(icl);
  const auto direct = synthetic_probabilities(fixture_params(), 0, 1);
  CHECK(std::exp(scores[0].logprob) == doctest::Approx(direct[0]).epsilon(1e-12));
}

TEST_CASE("cache write and read round trip") {
  TempDir dir;
  const std::string path = dir.file("scores.jsonl");
  test_helpers::spit(path, "");

  ScoreRequest req{"gpt2-large", "Review: great phone Sentiment:",
                   {" Positive", " Negative"}};
  const std::vector<CandidateScore> scores = {
      {" Positive", -2.125, -1.5}, {" Negative", -3.5, std::nullopt}};
  write_cache(path, req, scores);

  BackendConfig cfg;
  cfg.kind = BackendKind::cache_backed;
  cfg.cache_path = path;
  cfg.model_id = "gpt2-large";
  auto backend = make_backend(cfg);

  const auto got = backend->score(req);
  REQUIRE(got.size() == 2);
  CHECK(got[0].logprob == -2.125);
  CHECK(*got[0].logit == -1.5);
  CHECK(got[1].logprob == -3.5);
  CHECK_FALSE(got[1].logit.has_value());

  // Bit-identical on repeated calls.
  const auto again = backend->score(req);
  CHECK(again[0].logprob == got[0].logprob);
  CHECK(again[1].logprob == got[1].logprob);

  SUBCASE("cache miss names the key") {
    ScoreRequest missing{"gpt2-large", "some other prompt",
                         {" Positive", " Negative"}};
    CHECK_THROWS_WITH_AS(backend->score(missing),
                         doctest::Contains("cache miss"), Error);
    CHECK_THROWS_WITH_AS(backend->score(missing),
                         doctest::Contains(sha256_hex("some other prompt").c_str()),
                         Error);
  }
}

TEST_CASE("duplicate cache keys: the later record wins") {
  TempDir dir;
  const std::string path = dir.file("scores.jsonl");
  ScoreRequest req{"m", "p", {" A"}};
  write_cache(path, req, {{" A", -1.0, std::nullopt}});
  write_cache(path, req, {{" A", -2.0, std::nullopt}});

  BackendConfig cfg;
  cfg.kind = BackendKind::cache_backed;
  cfg.cache_path = path;
  cfg.model_id = "m";
  auto backend = make_backend(cfg);
  CHECK(backend->score(req)[0].logprob == -2.0);
}

TEST_CASE("cache loader validates records") {
  TempDir dir;
  BackendConfig cfg;
  cfg.kind = BackendKind::cache_backed;
  cfg.model_id = "m";

  SUBCASE("missing logprob names the line") {
    const std::string path = dir.file("bad.jsonl");
    test_helpers::spit(
        path,
        "{\"model\":\"m\",\"prompt_sha256\":\"" + sha256_hex("p") +
            "\",\"candidate\":\" A\",\"logprob\":-1.0,\"logit\":null}\n"
            "{\"model\":\"m\",\"prompt_sha256\":\"" +
            sha256_hex("q") + "\",\"candidate\":\" A\",\"logit\":null}\n");
    cfg.cache_path = path;
    CHECK_THROWS_WITH_AS(make_backend(cfg), doctest::Contains("line 2"), Error);
    CHECK_THROWS_WITH_AS(make_backend(cfg), doctest::Contains("logprob"), Error);
  }
  SUBCASE("malformed JSON line") {
    const std::string path = dir.file("bad2.jsonl");
    test_helpers::spit(path, "not json\n");
    cfg.cache_path = path;
    CHECK_THROWS_WITH_AS(make_backend(cfg), doctest::Contains("line 1"), Error);
  }
  SUBCASE("positive logprob rejected") {
    const std::string path = dir.file("bad3.jsonl");
    test_helpers::spit(path, "{\"model\":\"m\",\"prompt_sha256\":\"" +
                                 sha256_hex("p") +
                                 "\",\"candidate\":\" A\",\"logprob\":0.5}\n");
    cfg.cache_path = path;
    CHECK_THROWS_AS(make_backend(cfg), Error);
  }
}

TEST_CASE("caching backend composes write-through over an inner backend") {
  TempDir dir;
  const std::string path = dir.file("cache.jsonl");
  const auto fixture = make_synthetic_task(fixture_params(), 3);

  std::vector<CandidateScore> first;
  {
    auto backend =
        make_caching_backend(make_backend(fixture.backend), path);
    ScoreRequest req{"synthetic",
                     render_prompt(fixture.task, fixture.dataset.examples[0]),
                     fixture.task.candidates()};
    first = backend->score(req);
    CHECK(backend->score(req)[0].logprob == first[0].logprob);
  }

  // The populated cache now serves the same scores without the inner
  // backend.
  BackendConfig cfg;
  cfg.kind = BackendKind::cache_backed;
  cfg.cache_path = path;
  cfg.model_id = "synthetic";
  auto cached = make_backend(cfg);
  ScoreRequest req{"synthetic",
                   render_prompt(fixture.task, fixture.dataset.examples[0]),
                   fixture.task.candidates()};
  const auto got = cached->score(req);
  CHECK(got[0].logprob == first[0].logprob);
  CHECK(*got[0].logit == *first[0].logit);
}

namespace {

struct TestServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit TestServer(httplib::Server::Handler handler) {
    server.Post("/score", std::move(handler));
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~TestServer() {
    server.stop();
    thread.join();
  }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port);
  }
};

BackendConfig http_config(const std::string& endpoint) {
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = endpoint;
  cfg.model_id = "gpt2-large";
  return cfg;
}

}  // namespace

TEST_CASE("http backend speaks the wire protocol") {
  std::atomic<int> hits{0};
  TestServer server([&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const json body = json::parse(req.body);
    CHECK(body.at("model") == "gpt2-large");
    CHECK(body.at("prompt") == "Review: great phone Sentiment:");
    const auto candidates = body.at("candidates").get<std::vector<std::string>>();
    CHECK(candidates == std::vector<std::string>{" Positive", " Negative"});
    json out;
    out["scores"] = json::array(
        {{{"candidate", " Positive"}, {"logprob", -2.1}, {"logit", 3.25}},
         {{"candidate", " Negative"}, {"logprob", -3.4}, {"logit", nullptr}}});
    res.set_content(out.dump(), "application/json");
  });

  auto backend = make_backend(http_config(server.endpoint()));
  ScoreRequest req{"gpt2-large", "Review: great phone Sentiment:",
                   {" Positive", " Negative"}};
  const auto scores = backend->score(req);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0].candidate == " Positive");
  CHECK(scores[0].logprob == -2.1);
  CHECK(*scores[0].logit == 3.25);
  CHECK_FALSE(scores[1].logit.has_value());
  CHECK(hits == 1);
}

TEST_CASE("http backend rejects protocol violations") {
  SUBCASE("candidate count mismatch") {
    TestServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(
          R"({"scores":[{"candidate":" Positive","logprob":-2.1,"logit":null}]})",
          "application/json");
    });
    auto backend = make_backend(http_config(server.endpoint()));
    ScoreRequest req{"gpt2-large", "p", {" Positive", " Negative"}};
    CHECK_THROWS_WITH_AS(backend->score(req),
                         doctest::Contains("candidate count mismatch"), Error);
  }
  SUBCASE("non-200 status") {
    TestServer server([](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content("boom", "text/plain");
    });
    auto backend = make_backend(http_config(server.endpoint()));
    ScoreRequest req{"gpt2-large", "p", {" A"}};
    CHECK_THROWS_WITH_AS(backend->score(req), doctest::Contains("500"), Error);
  }
  SUBCASE("malformed body") {
    TestServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content("no json here", "application/json");
    });
    auto backend = make_backend(http_config(server.endpoint()));
    ScoreRequest req{"gpt2-large", "p", {" A"}};
    CHECK_THROWS_AS(backend->score(req), Error);
  }
  SUBCASE("reordered candidates") {
    TestServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(
          R"({"scores":[{"candidate":" B","logprob":-1.0,"logit":null},
                         {"candidate":" A","logprob":-2.0,"logit":null}]})",
          "application/json");
    });
    auto backend = make_backend(http_config(server.endpoint()));
    ScoreRequest req{"gpt2-large", "p", {" A", " B"}};
    CHECK_THROWS_WITH_AS(backend->score(req), doctest::Contains("out of order"),
                         Error);
  }
  SUBCASE("positive logprob") {
    TestServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(
          R"({"scores":[{"candidate":" A","logprob":0.25,"logit":null}]})",
          "application/json");
    });
    auto backend = make_backend(http_config(server.endpoint()));
    ScoreRequest req{"gpt2-large", "p", {" A"}};
    CHECK_THROWS_AS(backend->score(req), Error);
  }
  SUBCASE("unreachable endpoint") {
    auto backend = make_backend(http_config("http://127.0.0.1:1"));
    ScoreRequest req{"gpt2-large", "p", {" A"}};
    CHECK_THROWS_WITH_AS(backend->score(req), doctest::Contains("unreachable"),
                         Error);
  }
}

TEST_CASE("score_batch aligns results with requests") {
  const auto fixture = make_synthetic_task(fixture_params(), 5);
  auto backend = make_backend(fixture.backend);

  std::vector<ScoreRequest> reqs;
  for (const auto& example : fixture.dataset.examples)
    reqs.push_back(ScoreRequest{"synthetic",
                                render_prompt(fixture.task, example),
                                fixture.task.candidates()});
  REQUIRE(reqs.size() == 10);

  const auto batch = backend->score_batch(reqs);
  REQUIRE(batch.size() == 10);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const auto single = backend->score(reqs[i]);
    REQUIRE(batch[i].size() == single.size());
    for (std::size_t c = 0; c < single.size(); ++c)
      CHECK(batch[i][c].logprob == single[c].logprob);
  }

  SUBCASE("empty batch") {
    CHECK(backend->score_batch({}).empty());
  }
  SUBCASE("results are schedule-invariant") {
    std::vector<std::vector<std::vector<CandidateScore>>> runs;
    for (int mif : {1, 4, 16}) {
      BackendConfig cfg = fixture.backend;
      cfg.max_in_flight = mif;
      runs.push_back(make_backend(cfg)->score_batch(reqs));
    }
    for (std::size_t v = 1; v < runs.size(); ++v)
      for (std::size_t i = 0; i < reqs.size(); ++i)
        for (std::size_t c = 0; c < runs[0][i].size(); ++c) {
          CHECK(runs[v][i][c].logprob == runs[0][i][c].logprob);
          CHECK(*runs[v][i][c].logit == *runs[0][i][c].logit);
        }
  }
}

TEST_CASE("score_batch reports the first failing request") {
  TempDir dir;
  const std::string path = dir.file("cache.jsonl");
  // Only requests 0, 1 and 3 are cached; 2 is the first miss.
  for (int i : {0, 1, 3}) {
    ScoreRequest req{"m", "prompt-" + std::to_string(i), {" A"}};
    write_cache(path, req, {{" A", -1.0 - i, std::nullopt}});
  }
  BackendConfig cfg;
  cfg.kind = BackendKind::cache_backed;
  cfg.cache_path = path;
  cfg.model_id = "m";
  cfg.max_in_flight = 4;
  auto backend = make_backend(cfg);

  std::vector<ScoreRequest> reqs;
  for (int i = 0; i < 5; ++i)
    reqs.push_back(ScoreRequest{"m", "prompt-" + std::to_string(i), {" A"}});

  try {
    backend->score_batch(reqs);
    FAIL("expected BatchError");
  } catch (const BatchError& e) {
    CHECK(e.index == 2);
    CHECK(std::string(e.what()).find("cache miss") != std::string::npos);
  }
}
