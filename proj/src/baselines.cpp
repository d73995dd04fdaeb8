#include "biasknn/baselines.hpp"

#include "biasknn/rng.hpp"

namespace biasknn {

std::string zero_lm_predict(const TaskSpec& task, const FeatureVector& feature) {
  if (feature.values.size() != task.labels.size())
    throw Error("zero_lm_predict: feature dimension does not match task labels");
  std::size_t best = 0;
  for (std::size_t i = 1; i < feature.values.size(); ++i)
    if (feature.values[i] > feature.values[best]) best = i;
  return task.labels[best];
}

std::string build_icl_prompt(const TaskSpec& task,
                             const std::vector<Example>& demos,
                             const Example& test, const IclConfig& cfg) {
  std::vector<std::string> lines;
  lines.reserve(demos.size());
  for (const auto& demo : demos)
    lines.push_back(render_demonstration(task, demo));

  SplitMix64 gen(cfg.order_seed);
  fisher_yates(lines, gen);

  std::string prompt;
  for (const auto& line : lines) {
    prompt += line;
    prompt += cfg.separator;
  }
  prompt += render_prompt(task, test);
  return prompt;
}

std::string raw_icl_predict(const TaskSpec& task,
                            const std::vector<Example>& demos,
                            const Example& test, const IclConfig& cfg,
                            Backend& backend) {
  ScoreRequest req{backend.model_id(), build_icl_prompt(task, demos, test, cfg),
                   task.candidates()};
  const auto scores = backend.score(req);
  if (scores.size() != task.labels.size())
    throw Error("raw_icl_predict: expected " +
                std::to_string(task.labels.size()) + " scores, got " +
                std::to_string(scores.size()));
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i].logprob > scores[best].logprob) best = i;
  return task.labels[best];
}

}  // namespace biasknn
