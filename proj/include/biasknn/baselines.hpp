#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biasknn/backend.hpp"
#include "biasknn/features.hpp"
#include "biasknn/task.hpp"

namespace biasknn {

struct IclConfig {
  int m = 3;  // demonstrations per class (or total, per eval semantics)
  std::uint64_t order_seed = 0;
  std::string separator = "\n";
};

// Zero-shot baseline: argmax component of the bias vector, ties broken
// by label order.
std::string zero_lm_predict(const TaskSpec& task, const FeatureVector& feature);

// Demonstrations rendered, shuffled by order_seed, joined by the
// separator and followed by the test prompt. With no demonstrations this
// is exactly render_prompt(task, test).
std::string build_icl_prompt(const TaskSpec& task,
                             const std::vector<Example>& demos,
                             const Example& test, const IclConfig& cfg);

// In-context learning baseline: scores the verbalizer candidates after
// the demonstration prompt and takes the argmax.
std::string raw_icl_predict(const TaskSpec& task,
                            const std::vector<Example>& demos,
                            const Example& test, const IclConfig& cfg,
                            Backend& backend);

}  // namespace biasknn
