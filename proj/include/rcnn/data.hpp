#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rcnn/config.hpp"

namespace rcnn {

struct LabeledExample {
  std::string id;
  std::string text;
  // 0 literal / 1 figurative, or an integer sentiment score in [-5, 5].
  double target = 0.0;
};

struct Dataset {
  TaskHead schema = TaskHead::kBinary;
  std::vector<LabeledExample> examples;  // file order
  std::map<int, std::size_t> counts;     // per label or score value
  std::vector<std::string> warnings;     // duplicate ids and the like

  std::vector<std::string> texts() const;
  std::vector<double> targets() const;
};

// Parses UTF-8 TSV with the header "id<TAB>label<TAB>text". Rows must have
// exactly three fields, an integer label in the schema's range, and text that
// is non-empty after normalization. Errors name the 1-based line number.
Dataset parse_dataset(std::string_view contents, TaskHead schema, const std::string& source = "<memory>");
Dataset load_dataset(const std::filesystem::path& path, TaskHead schema);

// Validates that a target suits the task head; throws LabelError otherwise.
void check_target(double target, TaskHead schema);

// One text per non-blank line.
std::vector<std::string> load_corpus(const std::filesystem::path& path);

}  // namespace rcnn
