#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "biasknn/backend.hpp"
#include "biasknn/task.hpp"

namespace test_helpers {

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    path = base / ("biasknn-test-" + std::to_string(rd()) + "-" +
                   std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline biasknn::TaskSpec cr_task() {
  biasknn::TaskSpec task;
  task.name = "cr";
  task.template_text = "Review: [X] Sentiment: [Y]";
  task.labels = {"Positive", "Negative"};
  task.verbalizer = {{"Positive", "Positive"}, {"Negative", "Negative"}};
  task.input_fields = {"text"};
  return task;
}

inline biasknn::Example text_example(const std::string& id,
                                     const std::string& text,
                                     const std::string& label = "") {
  biasknn::Example example;
  example.id = id;
  example.fields["text"] = text;
  if (!label.empty()) example.gold_label = label;
  return example;
}

// The acceptance fixture's parameters: planted binary bias, classes at
// 10 and 30 degrees, both below the y=x decision boundary.
inline biasknn::SyntheticParams fixture_params() {
  biasknn::SyntheticParams params;
  params.num_labels = 2;
  params.class_angles_deg = {10.0, 30.0};
  params.angle_noise_deg = 3.0;
  params.radius_lo = 0.05;
  params.radius_hi = 0.40;
  params.seed = 7;
  return params;
}

}  // namespace test_helpers
