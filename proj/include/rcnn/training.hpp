#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcnn/config.hpp"
#include "rcnn/data.hpp"
#include "rcnn/encoder.hpp"
#include "rcnn/model.hpp"
#include "rcnn/tokenizer.hpp"

namespace rcnn {

// Bias and layer-norm parameters are exempt from weight decay.
bool uses_weight_decay(const std::string& name);

// Bias-corrected Adam with decoupled weight decay:
//   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
//   θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ
class Adam {
 public:
  Adam(ParameterList params, const TrainConfig& config);

  // Applies one update from the parameters' accumulated gradients. Throws
  // NumericError naming the parameter when a gradient is not finite.
  void step();
  void zero_grad();

  std::size_t steps() const { return step_; }
  const ParameterList& parameters() const { return params_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  ParameterList params_;
  TrainConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
};

Json to_json(const StepRecord& r);
// One JSON object per line.
std::string to_jsonl(std::span<const StepRecord> records);

// Called with (epoch, corpus index, masking) for every sequence masked.
using MaskObserver = std::function<void(std::size_t, std::size_t, const MaskingOutcome&)>;

struct PretrainResult {
  EncoderParams encoder;
  std::vector<StepRecord> log;
};

// Masked-language-model pretraining. Each epoch shuffles the corpus and draws
// fresh masks for every sequence. With max_steps > 0 training runs exactly
// that many steps, cycling through as many epochs as needed; otherwise it runs
// config.epochs full passes. Lines without a maskable token are skipped.
PretrainResult pretrain_mlm(std::span<const std::string> corpus, const Tokenizer& tokenizer,
                            const ModelConfig& model_config, const TrainConfig& train_config,
                            const MaskObserver& observer = {});

// Supervised fine-tuning of the whole stack, one epoch at a time.
class FineTuner {
 public:
  // Throws DataError on an empty dataset and LabelError on targets outside the
  // model's task range. When freeze_encoder is set only head parameters train.
  FineTuner(RcnnRoberta& model, const Tokenizer& tokenizer, std::span<const LabeledExample> examples,
            const TrainConfig& config);

  // Returns the mean training loss of the epoch. The last partial batch is
  // trained. Stops early once max_steps is reached.
  double run_epoch();

  bool done() const;
  std::size_t epoch() const { return epoch_; }
  const std::vector<StepRecord>& log() const { return log_; }
  const std::vector<double>& epoch_losses() const { return epoch_losses_; }
  // Fraction of training examples predicted correctly (binary) without dropout.
  double train_accuracy() const;

 private:
  RcnnRoberta& model_;
  const Tokenizer& tokenizer_;
  TrainConfig config_;
  std::vector<EncodedSequence> sequences_;
  std::vector<double> targets_;
  std::vector<std::string> texts_;
  Adam optimizer_;
  Rng shuffle_rng_, dropout_rng_;
  std::size_t epoch_ = 0;
  std::vector<StepRecord> log_;
  std::vector<double> epoch_losses_;
};

struct FinetuneResult {
  RcnnRoberta model;
  std::vector<StepRecord> log;
  std::vector<double> epoch_losses;
};

// Called after each fine-tuning epoch with (epoch, mean loss).
using EpochObserver = std::function<void(std::size_t, double)>;

// Builds the model from the "init" stream (optionally loading a pretrained
// encoder checkpoint's tensors) and runs config.epochs epochs.
FinetuneResult finetune(std::span<const LabeledExample> examples, const Tokenizer& tokenizer,
                        const ModelConfig& model_config, const TrainConfig& train_config,
                        const Checkpoint* pretrained_encoder = nullptr, const EpochObserver& on_epoch = {});

}  // namespace rcnn
