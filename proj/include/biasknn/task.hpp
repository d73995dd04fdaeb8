#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace biasknn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A classification task: prompt template, ordered label set and the
// verbalizer mapping each label to a single vocabulary word. Label order
// is load-bearing: component i of every feature vector downstream
// corresponds to labels[i].
struct TaskSpec {
  std::string name;
  std::string template_text;  // contains [X] (or [X1]/[X2]) and one [Y]
  std::vector<std::string> labels;
  std::map<std::string, std::string> verbalizer;  // label -> word
  std::vector<std::string> input_fields;          // length 1 or 2

  int label_index(const std::string& label) const;
  const std::string& verbalizer_word(const std::string& label) const;
  // Candidate continuation handed to the backend: " " + verbalizer word.
  std::string candidate_for(const std::string& label) const;
  std::vector<std::string> candidates() const;  // label order
  void validate() const;
};

struct Example {
  std::string id;
  std::map<std::string, std::string> fields;  // field name -> text
  std::optional<std::string> gold_label;
};

enum class Split { train, test };

struct Dataset {
  std::vector<Example> examples;
  Split split = Split::train;
};

TaskSpec load_task_config(const std::string& path);
TaskSpec task_from_json_text(const std::string& text);
std::string task_to_json_text(const TaskSpec& task);

// JSONL (one object per line) or CSV (header row, same column names),
// chosen by file extension. Labels are validated against the task.
Dataset load_dataset(const std::string& path, const TaskSpec& task, Split split);
Dataset dataset_from_jsonl_text(const std::string& text, const TaskSpec& task,
                                Split split);
Dataset dataset_from_csv_text(const std::string& text, const TaskSpec& task,
                              Split split);
void save_dataset_jsonl(const Dataset& dataset, const std::string& path);

// The scoring prompt: template with inputs substituted, cut at [Y]. A
// single space immediately before [Y] moves onto the candidate string.
std::string render_prompt(const TaskSpec& task, const Example& example);

// Template with inputs substituted and [Y] replaced by the verbalizer
// word of the example's gold label.
std::string render_demonstration(const TaskSpec& task, const Example& example);

}  // namespace biasknn
