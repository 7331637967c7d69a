#include "rcnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rcnn/errors.hpp"

namespace rcnn {

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Explicit Fisher-Yates so the permutation does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

ParameterList trainable_parameters(RcnnRoberta& model, bool freeze_encoder) {
  if (!freeze_encoder) return model.parameters();
  for (auto& p : model.encoder().named()) p.tensor.set_requires_grad(false);
  return model.head().named();
}

}  // namespace

bool uses_weight_decay(const std::string& name) {
  return !ends_with(name, ".bias") && name.find("norm.") == std::string::npos;
}

Adam::Adam(ParameterList params, const TrainConfig& config) : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const auto& p : params_) {
    if (!p.tensor.requires_grad()) throw ContractError("optimizer parameter " + p.name + " does not track gradients");
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  double clip_scale = 1.0;
  if (config_.grad_clip) {
    double sq = 0.0;
    for (const auto& p : params_) {
      for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > *config_.grad_clip) clip_scale = *config_.grad_clip / norm;
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate, eps = config_.adam_eps;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].tensor;
    const double wd = uses_weight_decay(params_[k].name) ? config_.weight_decay : 0.0;
    auto theta = t.values();
    auto grad = t.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] * clip_scale;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      const double old = theta[i];
      theta[i] = old - lr * (m_hat / (std::sqrt(v_hat) + eps)) - lr * wd * old;
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Json to_json(const StepRecord& r) {
  Json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  return j;
}

std::string to_jsonl(std::span<const StepRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

PretrainResult pretrain_mlm(std::span<const std::string> corpus, const Tokenizer& tokenizer,
                            const ModelConfig& model_config, const TrainConfig& train_config,
                            const MaskObserver& observer) {
  model_config.validate();
  train_config.validate();
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  if (model_config.vocab_size != tokenizer.vocab_size()) {
    throw ConfigError("model vocab_size " + std::to_string(model_config.vocab_size) + " differs from tokenizer's " +
                      std::to_string(tokenizer.vocab_size()));
  }
  std::vector<EncodedSequence> sequences;
  std::vector<std::size_t> source_index;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EncodedSequence s = tokenizer.encode(corpus[i], model_config.max_seq_len);
    if (s.length < 3) continue;
    sequences.push_back(std::move(s));
    source_index.push_back(i);
  }
  if (sequences.empty()) throw DataError("pretraining corpus has no line with a maskable token");

  Rng init_rng = make_stream(train_config.seed, "init");
  Rng shuffle_rng = make_stream(train_config.seed, "shuffle");
  Rng mask_rng = make_stream(train_config.seed, "mask");
  Rng dropout_rng = make_stream(train_config.seed, "dropout");

  PretrainResult result{EncoderParams::init(model_config, init_rng), {}};
  Adam optimizer(result.encoder.named(), train_config);
  const std::size_t bs = train_config.batch_size;
  const bool by_steps = train_config.max_steps > 0;

  for (std::size_t epoch = 1; by_steps || epoch <= train_config.epochs; ++epoch) {
    const auto order = shuffled_indices(sequences.size(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      if (by_steps && optimizer.steps() >= train_config.max_steps) return result;
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<EncodedSequence> masked;
      std::vector<MaskingOutcome> outcomes;
      for (std::size_t k = start; k < end; ++k) {
        const auto& seq = sequences[order[k]];
        MaskingOutcome outcome = dynamic_mask(seq, model_config.vocab_size, mask_rng);
        if (observer) observer(epoch, source_index[order[k]], outcome);
        masked.push_back(apply_mask(seq, outcome));
        outcomes.push_back(std::move(outcome));
      }
      Batch batch = make_batch(masked);
      Graph graph;
      MlmOutput out = mlm_forward(graph, result.encoder, model_config, batch, outcomes, &dropout_rng);
      optimizer.zero_grad();
      graph.backward(out.loss);
      optimizer.step();
      result.log.push_back({optimizer.steps(), epoch, out.loss[0]});
    }
    if (by_steps && optimizer.steps() >= train_config.max_steps) return result;
  }
  return result;
}

FineTuner::FineTuner(RcnnRoberta& model, const Tokenizer& tokenizer, std::span<const LabeledExample> examples,
                     const TrainConfig& config)
    : model_(model),
      tokenizer_(tokenizer),
      config_(config),
      optimizer_(trainable_parameters(model, config.freeze_encoder), config),
      shuffle_rng_(make_stream(config.seed, "shuffle")),
      dropout_rng_(make_stream(config.seed, "dropout")) {
  if (examples.empty()) throw DataError("training dataset is empty");
  if (model.config().vocab_size != tokenizer.vocab_size()) {
    throw ConfigError("model vocab_size " + std::to_string(model.config().vocab_size) + " differs from tokenizer's " +
                      std::to_string(tokenizer.vocab_size()));
  }
  for (const auto& e : examples) {
    try {
      check_target(e.target, model.config().task);
    } catch (const LabelError& err) {
      throw LabelError("example '" + e.id + "': " + err.what());
    }
    sequences_.push_back(tokenizer.encode(e.text, model.config().max_seq_len));
    targets_.push_back(e.target);
    texts_.push_back(e.text);
  }
}

bool FineTuner::done() const {
  if (config_.max_steps > 0) return optimizer_.steps() >= config_.max_steps;
  return epoch_ >= config_.epochs;
}

double FineTuner::run_epoch() {
  if (done()) throw ContractError("fine-tuning already finished");
  ++epoch_;
  const auto order = shuffled_indices(sequences_.size(), shuffle_rng_);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    if (config_.max_steps > 0 && optimizer_.steps() >= config_.max_steps) break;
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    std::vector<EncodedSequence> seqs;
    std::vector<double> targets;
    for (std::size_t k = start; k < end; ++k) {
      seqs.push_back(sequences_[order[k]]);
      targets.push_back(targets_[order[k]]);
    }
    Batch batch = make_batch(seqs);
    Graph graph;
    Tensor loss = model_.loss(graph, batch, targets, &dropout_rng_);
    optimizer_.zero_grad();
    graph.backward(loss);
    optimizer_.step();
    log_.push_back({optimizer_.steps(), epoch_, loss[0]});
    total += loss[0];
    ++batches;
  }
  const double mean = batches ? total / static_cast<double>(batches) : 0.0;
  epoch_losses_.push_back(mean);
  return mean;
}

double FineTuner::train_accuracy() const {
  const auto preds = predict(model_, tokenizer_, texts_);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double guess = model_.config().task == TaskHead::kBinary ? preds[i].label : std::round(preds[i].score);
    if (guess == targets_[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

FinetuneResult finetune(std::span<const LabeledExample> examples, const Tokenizer& tokenizer,
                        const ModelConfig& model_config, const TrainConfig& train_config,
                        const Checkpoint* pretrained_encoder, const EpochObserver& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (examples.empty()) throw DataError("training dataset is empty");
  Rng init_rng = make_stream(train_config.seed, "init");
  RcnnRoberta model(model_config, init_rng);
  if (pretrained_encoder) assign_tensors(*pretrained_encoder, model.encoder().named());
  std::vector<StepRecord> log;
  std::vector<double> losses;
  {
    FineTuner tuner(model, tokenizer, examples, train_config);
    while (!tuner.done()) {
      const double loss = tuner.run_epoch();
      if (on_epoch) on_epoch(tuner.epoch(), loss);
    }
    log = tuner.log();
    losses = tuner.epoch_losses();
  }
  return {std::move(model), std::move(log), std::move(losses)};
}

}  // namespace rcnn
