#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

namespace rcnn {

using Json = nlohmann::ordered_json;

enum class TaskHead {
  kBinary,      // 2-way softmax, irony/sarcasm vs literal
  kRegression,  // single linear unit, sentiment score in [-5, 5]
};

std::string to_string(TaskHead task);
TaskHead parse_task(const std::string& name);

struct ModelConfig {
  std::size_t n_layers = 12;
  std::size_t n_heads = 12;
  std::size_t d_model = 768;
  std::size_t d_ff = 3072;
  std::size_t max_seq_len = 512;
  std::size_t vocab_size = 50265;
  double dropout = 0.1;
  std::size_t lstm_units = 64;
  double lstm_dropout = 0.1;
  std::size_t d_proj = 128;
  double layer_norm_eps = 1e-5;
  double init_std = 0.02;
  TaskHead task = TaskHead::kBinary;

  // RoBERTa-base sized encoder; same as the field defaults.
  static ModelConfig base();
  // Desk-scale encoder: 2 layers, 2 heads, d_model 64.
  static ModelConfig toy();

  std::size_t n_outputs() const { return task == TaskHead::kBinary ? 2 : 1; }
  // Throws ConfigError on inconsistent sizes.
  void validate() const;
};

struct TrainConfig {
  std::size_t batch_size = 10;
  std::size_t epochs = 5;
  double learning_rate = 2e-5;
  double adam_eps = 1e-6;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 42;
  std::optional<double> grad_clip;
  // Stop after this many optimizer steps; 0 runs every epoch to the end.
  std::size_t max_steps = 0;
  bool freeze_encoder = false;

  void validate() const;
};

Json to_json(const ModelConfig& config);
Json to_json(const TrainConfig& config);
// Fields missing from `j` keep the values already in `config`.
void merge_from_json(const Json& j, ModelConfig& config);
void merge_from_json(const Json& j, TrainConfig& config);

}  // namespace rcnn
