#include "biasknn/task.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "util.hpp"

namespace biasknn {

using nlohmann::json;
using detail::count_occurrences;

int TaskSpec::label_index(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

const std::string& TaskSpec::verbalizer_word(const std::string& label) const {
  auto it = verbalizer.find(label);
  if (it == verbalizer.end())
    throw Error("task \"" + name + "\": no verbalizer entry for label \"" +
                label + "\"");
  return it->second;
}

std::string TaskSpec::candidate_for(const std::string& label) const {
  return " " + verbalizer_word(label);
}

std::vector<std::string> TaskSpec::candidates() const {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (const auto& label : labels) out.push_back(candidate_for(label));
  return out;
}

void TaskSpec::validate() const {
  if (name.empty()) throw Error("task name must be non-empty");
  if (labels.size() < 2) throw Error("task \"" + name + "\": needs >= 2 labels");
  std::set<std::string> label_set(labels.begin(), labels.end());
  if (label_set.size() != labels.size())
    throw Error("task \"" + name + "\": labels must be pairwise distinct");

  if (verbalizer.size() != labels.size())
    throw Error("task \"" + name +
                "\": verbalizer must have exactly one entry per label");
  std::set<std::string> words;
  for (const auto& label : labels) {
    auto it = verbalizer.find(label);
    if (it == verbalizer.end())
      throw Error("task \"" + name + "\": verbalizer missing label \"" + label +
                  "\"");
    if (it->second.empty())
      throw Error("task \"" + name + "\": empty verbalizer word for label \"" +
                  label + "\"");
    if (!words.insert(it->second).second)
      throw Error("task \"" + name + "\": duplicate verbalizer word \"" +
                  it->second + "\"");
  }

  if (input_fields.empty() || input_fields.size() > 2)
    throw Error("task \"" + name + "\": input_fields must have length 1 or 2");
  std::set<std::string> field_set(input_fields.begin(), input_fields.end());
  if (field_set.size() != input_fields.size())
    throw Error("task \"" + name + "\": input_fields must be distinct");

  if (count_occurrences(template_text, "[Y]") != 1) {
    if (count_occurrences(template_text, "[Y]") == 0)
      throw Error("task \"" + name + "\": template missing [Y]");
    throw Error("task \"" + name + "\": template must contain exactly one [Y]");
  }
  const auto n_x = count_occurrences(template_text, "[X]");
  const auto n_x1 = count_occurrences(template_text, "[X1]");
  const auto n_x2 = count_occurrences(template_text, "[X2]");
  if (input_fields.size() == 1) {
    if (n_x != 1 || n_x1 != 0 || n_x2 != 0)
      throw Error("task \"" + name +
                  "\": single-field template must contain exactly one [X]");
  } else {
    if (n_x != 0 || n_x1 != 1 || n_x2 != 1)
      throw Error("task \"" + name +
                  "\": two-field template must contain exactly one [X1] and "
                  "one [X2]");
  }
}

namespace {

TaskSpec task_from_json(const json& j, const std::string& origin) {
  if (!j.is_object()) throw Error(origin + ": task config must be a JSON object");
  TaskSpec task;
  try {
    task.name = j.at("name").get<std::string>();
    task.template_text = j.at("template").get<std::string>();
    task.labels = j.at("labels").get<std::vector<std::string>>();
    task.verbalizer =
        j.at("verbalizer").get<std::map<std::string, std::string>>();
    task.input_fields = j.at("input_fields").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(origin + ": malformed task config: " + e.what());
  }
  try {
    task.validate();
  } catch (const Error& e) {
    throw Error(origin + ": " + e.what());
  }
  return task;
}

const std::string& field_text(const TaskSpec& task, const Example& example,
                              std::size_t field_idx) {
  const std::string& field = task.input_fields.at(field_idx);
  auto it = example.fields.find(field);
  if (it == example.fields.end())
    throw Error("example \"" + example.id + "\" missing field \"" + field +
                "\"");
  return it->second;
}

void check_fields_match(const TaskSpec& task, const Example& example) {
  if (example.fields.size() != task.input_fields.size())
    throw Error("example \"" + example.id +
                "\": fields do not match task input_fields");
  for (const auto& field : task.input_fields)
    if (!example.fields.count(field))
      throw Error("example \"" + example.id + "\" missing field \"" + field +
                  "\"");
}

// Single left-to-right pass over the template. Placeholder tokens are
// replaced exactly once and substituted text is never re-scanned, so
// inputs containing bracket sequences stay inert. When `answer` is empty
// the output stops just before [Y], dropping one preceding space.
std::string render(const TaskSpec& task, const Example& example,
                   const std::optional<std::string>& answer) {
  check_fields_match(task, example);
  const std::string& t = task.template_text;
  const bool two_fields = task.input_fields.size() == 2;
  std::string out;
  out.reserve(t.size() + 64);
  std::size_t i = 0;
  while (i < t.size()) {
    if (t.compare(i, 3, "[Y]") == 0) {
      if (!answer) {
        if (!out.empty() && out.back() == ' ') out.pop_back();
        return out;
      }
      out += *answer;
      i += 3;
    } else if (!two_fields && t.compare(i, 3, "[X]") == 0) {
      out += field_text(task, example, 0);
      i += 3;
    } else if (two_fields && t.compare(i, 4, "[X1]") == 0) {
      out += field_text(task, example, 0);
      i += 4;
    } else if (two_fields && t.compare(i, 4, "[X2]") == 0) {
      out += field_text(task, example, 1);
      i += 4;
    } else {
      out += t[i];
      ++i;
    }
  }
  return out;
}

}  // namespace

TaskSpec load_task_config(const std::string& path) {
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw Error(path + ": malformed JSON: " + e.what());
  }
  return task_from_json(j, path);
}

TaskSpec task_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed task config JSON: ") + e.what());
  }
  return task_from_json(j, "task config");
}

std::string task_to_json_text(const TaskSpec& task) {
  json j;
  j["name"] = task.name;
  j["template"] = task.template_text;
  j["labels"] = task.labels;
  j["verbalizer"] = task.verbalizer;
  j["input_fields"] = task.input_fields;
  return j.dump(2) + "\n";
}

std::string render_prompt(const TaskSpec& task, const Example& example) {
  return render(task, example, std::nullopt);
}

std::string render_demonstration(const TaskSpec& task, const Example& example) {
  if (!example.gold_label)
    throw Error("example \"" + example.id +
                "\": demonstration requires gold label");
  return render(task, example, task.verbalizer_word(*example.gold_label));
}

namespace {

std::string allowed_labels(const TaskSpec& task) {
  std::string out;
  for (std::size_t i = 0; i < task.labels.size(); ++i) {
    if (i) out += ", ";
    out += task.labels[i];
  }
  return out;
}

void append_example(Dataset& dataset, std::set<std::string>& seen,
                    const TaskSpec& task, Example example,
                    const std::string& origin) {
  if (example.gold_label && task.label_index(*example.gold_label) < 0)
    throw Error(origin + ": unknown label \"" + *example.gold_label +
                "\" (allowed: " + allowed_labels(task) + ")");
  for (const auto& field : task.input_fields)
    if (!example.fields.count(field))
      throw Error(origin + ": missing field \"" + field + "\"");
  if (!seen.insert(example.id).second)
    throw Error(origin + ": duplicate id \"" + example.id + "\"");
  dataset.examples.push_back(std::move(example));
}

// Minimal RFC 4180 reader: quoted fields, doubled quotes, embedded
// commas and newlines. Rows are returned without the trailing CR.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < text.size()) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
        } else {
          in_quotes = false;
          ++i;
        }
      } else {
        field += c;
        ++i;
      }
    } else if (c == '"' && !field_started && field.empty()) {
      in_quotes = true;
      field_started = true;
      ++i;
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      end_row();
      ++i;
    } else {
      field += c;
      field_started = true;
      ++i;
    }
  }
  if (in_quotes) throw Error("CSV: unterminated quoted field");
  if (!field.empty() || !row.empty()) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    end_row();
  }
  return rows;
}

}  // namespace

Dataset dataset_from_jsonl_text(const std::string& text, const TaskSpec& task,
                                Split split) {
  Dataset dataset;
  dataset.split = split;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t record_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("line " + std::to_string(line_no) + ": malformed JSON: " +
                  e.what());
    }
    if (!j.is_object())
      throw Error("line " + std::to_string(line_no) + ": record must be an object");
    Example example;
    try {
      if (j.contains("id")) example.id = j.at("id").get<std::string>();
      else example.id = "row-" + std::to_string(record_no);
      if (j.contains("label") && !j.at("label").is_null())
        example.gold_label = j.at("label").get<std::string>();
      for (const auto& field : task.input_fields)
        if (j.contains(field))
          example.fields[field] = j.at(field).get<std::string>();
    } catch (const json::exception& e) {
      throw Error("line " + std::to_string(line_no) + ": " + e.what());
    }
    append_example(dataset, seen, task, std::move(example),
                   "line " + std::to_string(line_no));
    ++record_no;
  }
  return dataset;
}

Dataset dataset_from_csv_text(const std::string& text, const TaskSpec& task,
                              Split split) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw Error("CSV: missing header row");
  const auto& header = rows.front();
  auto column = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int id_col = column("id");
  const int label_col = column("label");
  std::vector<int> field_cols;
  for (const auto& field : task.input_fields) {
    int col = column(field);
    if (col < 0) throw Error("CSV: header missing column \"" + field + "\"");
    field_cols.push_back(col);
  }

  Dataset dataset;
  dataset.split = split;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string origin = "CSV row " + std::to_string(r);
    auto cell = [&](int col) -> const std::string& {
      if (col < 0 || static_cast<std::size_t>(col) >= row.size())
        throw Error(origin + ": missing column " + std::to_string(col));
      return row[static_cast<std::size_t>(col)];
    };
    Example example;
    example.id = (id_col >= 0 && static_cast<std::size_t>(id_col) < row.size() &&
                  !row[id_col].empty())
                     ? row[id_col]
                     : "row-" + std::to_string(r - 1);
    if (label_col >= 0 && static_cast<std::size_t>(label_col) < row.size() &&
        !row[label_col].empty())
      example.gold_label = row[label_col];
    for (std::size_t f = 0; f < task.input_fields.size(); ++f)
      example.fields[task.input_fields[f]] = cell(field_cols[f]);
    append_example(dataset, seen, task, std::move(example), origin);
  }
  return dataset;
}

Dataset load_dataset(const std::string& path, const TaskSpec& task, Split split) {
  const std::string text = detail::read_file(path);
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  try {
    return csv ? dataset_from_csv_text(text, task, split)
               : dataset_from_jsonl_text(text, task, split);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

void save_dataset_jsonl(const Dataset& dataset, const std::string& path) {
  std::string out;
  for (const auto& example : dataset.examples) {
    json j;
    j["id"] = example.id;
    for (const auto& [field, text] : example.fields) j[field] = text;
    if (example.gold_label) j["label"] = *example.gold_label;
    out += j.dump();
    out += '\n';
  }
  detail::write_file(path, out);
}

}  // namespace biasknn
