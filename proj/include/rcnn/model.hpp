#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcnn/checkpoint.hpp"
#include "rcnn/config.hpp"
#include "rcnn/encoder.hpp"
#include "rcnn/rcnn_head.hpp"
#include "rcnn/tokenizer.hpp"

namespace rcnn {

// Encoder followed by the BiLSTM/projection/pooling head.
class RcnnRoberta {
 public:
  RcnnRoberta(const ModelConfig& config, Rng& init_rng);

  const ModelConfig& config() const { return config_; }
  EncoderParams& encoder() { return encoder_; }
  const EncoderParams& encoder() const { return encoder_; }
  RcnnParams& head() { return head_; }
  const RcnnParams& head() const { return head_; }

  // Encoder then head parameters, in a fixed order.
  ParameterList parameters() const;

  RcnnOutput forward(Graph& graph, const Batch& batch, Rng* dropout_rng = nullptr) const;

  // Cross-entropy over class labels (binary) or mean squared error over
  // scores (regression). targets[b] belongs to batch row b.
  Tensor loss(Graph& graph, const Batch& batch, std::span<const double> targets, Rng* dropout_rng = nullptr) const;

 private:
  ModelConfig config_;
  EncoderParams encoder_;
  RcnnParams head_;
};

struct Prediction {
  int label = 0;
  std::vector<double> probs;  // binary only
  double score = 0.0;         // regression only
};

inline constexpr double kScoreMin = -5.0;
inline constexpr double kScoreMax = 5.0;

// Normalizes, encodes and runs the model without dropout, batch_size texts at
// a time. Binary label is the argmax with ties to class 0; regression scores
// are clamped to [-5, 5].
std::vector<Prediction> predict(const RcnnRoberta& model, const Tokenizer& tokenizer,
                                std::span<const std::string> texts, std::size_t batch_size = 32);

Json prediction_json(const std::string& text, const Prediction& p, TaskHead task);

// A model directory is a checkpoint plus tokenizer.json; the checkpoint config
// records model and training settings and the tokenizer's SHA-256.
void save_model(const std::filesystem::path& dir, const RcnnRoberta& model, const Tokenizer& tokenizer,
                const Json& train_config, const std::string& kind = "rcnn-roberta");

struct LoadedModel {
  RcnnRoberta model;
  Tokenizer tokenizer;
  Json config;
};

// Throws ConfigError when the directory is missing or its tokenizer does not
// match the recorded hash or vocabulary size.
LoadedModel load_model(const std::filesystem::path& dir);

// Encoder-only checkpoint (pretraining output): encoder parameters and the
// MLM bias plus tokenizer.json.
void save_encoder(const std::filesystem::path& dir, const EncoderParams& encoder, const ModelConfig& config,
                  const Tokenizer& tokenizer, const Json& train_config);

struct LoadedEncoder {
  Checkpoint checkpoint;
  ModelConfig config;
  Tokenizer tokenizer;
};

LoadedEncoder load_encoder(const std::filesystem::path& dir);

}  // namespace rcnn
