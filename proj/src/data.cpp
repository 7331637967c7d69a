#include "rcnn/data.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "rcnn/checkpoint.hpp"
#include "rcnn/errors.hpp"
#include "rcnn/tokenizer.hpp"

namespace rcnn {

namespace {

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::vector<std::string_view> split_lines(std::string_view contents) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < contents.size()) {
    std::size_t nl = contents.find('\n', start);
    if (nl == std::string_view::npos) nl = contents.size();
    std::string_view line = contents.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}

}  // namespace

std::vector<std::string> Dataset::texts() const {
  std::vector<std::string> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.text);
  return out;
}

std::vector<double> Dataset::targets() const {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.target);
  return out;
}

void check_target(double target, TaskHead schema) {
  if (schema == TaskHead::kBinary) {
    if (target != 0.0 && target != 1.0) {
      throw LabelError("label " + Json(target).dump() + " is not 0 or 1");
    }
  } else if (!(target >= -5.0 && target <= 5.0) || std::floor(target) != target) {
    throw LabelError("score " + Json(target).dump() + " is not an integer in [-5, 5]");
  }
}

Dataset parse_dataset(std::string_view contents, TaskHead schema, const std::string& source) {
  const auto lines = split_lines(contents);
  if (lines.empty() || lines.front() != "id\tlabel\ttext") {
    throw DataError(where(source, 1) + "expected header 'id<TAB>label<TAB>text'");
  }
  Dataset data;
  data.schema = schema;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto fields = split_tabs(lines[i]);
    if (fields.size() != 3) {
      throw DataError(where(source, line_no) + "expected 3 tab-separated fields, found " +
                      std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw DataError(where(source, line_no) + "empty id");
    int label = 0;
    const auto [end, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), label);
    if (ec != std::errc() || end != fields[1].data() + fields[1].size()) {
      throw LabelError(where(source, line_no) + "label '" + std::string(fields[1]) + "' is not an integer");
    }
    try {
      check_target(label, schema);
    } catch (const LabelError& e) {
      throw LabelError(where(source, line_no) + e.what());
    }
    std::string normalized;
    try {
      normalized = normalize(fields[2]);
    } catch (const EncodingError& e) {
      throw EncodingError(where(source, line_no) + e.what());
    }
    if (normalized.empty()) throw DataError(where(source, line_no) + "text is empty");

    std::string id(fields[0]);
    if (!seen.insert(id).second) data.warnings.push_back(where(source, line_no) + "duplicate id '" + id + "'");
    data.examples.push_back({std::move(id), std::string(fields[2]), static_cast<double>(label)});
    ++data.counts[label];
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& path, TaskHead schema) {
  if (!std::filesystem::exists(path)) throw DataError("dataset " + path.string() + " not found");
  return parse_dataset(read_file(path), schema, path.string());
}

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("corpus " + path.string() + " not found");
  const std::string contents = read_file(path);
  std::vector<std::string> out;
  for (auto line : split_lines(contents)) {
    if (line.find_first_not_of(" \t") != std::string_view::npos) out.emplace_back(line);
  }
  return out;
}

}  // namespace rcnn
