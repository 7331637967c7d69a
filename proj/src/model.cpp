#include "rcnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "rcnn/checkpoint.hpp"
#include "rcnn/errors.hpp"
#include "rcnn/ops.hpp"

namespace rcnn {

namespace {

constexpr const char* kTokenizerFile = "tokenizer.json";

Json checkpoint_config(const std::string& kind, const ModelConfig& config, const Json& train_config,
                       const Tokenizer& tokenizer) {
  Json j;
  j["kind"] = kind;
  j["model"] = to_json(config);
  j["train"] = train_config;
  j["tokenizer_sha256"] = sha256_hex(tokenizer.to_json());
  return j;
}

// Reads the tokenizer stored next to a checkpoint and checks it against the
// recorded hash and model vocabulary.
Tokenizer load_matching_tokenizer(const std::filesystem::path& dir, const Json& config, const ModelConfig& model) {
  const auto path = dir / kTokenizerFile;
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint " + dir.string() + " has no " + kTokenizerFile);
  const std::string text = read_file(path);
  if (!config.contains("tokenizer_sha256") || config["tokenizer_sha256"].get<std::string>() != sha256_hex(text)) {
    throw ConfigError("tokenizer in " + dir.string() + " does not match the hash recorded in the checkpoint");
  }
  Tokenizer tokenizer = Tokenizer::from_json(text);
  if (tokenizer.vocab_size() != model.vocab_size) {
    throw ConfigError("tokenizer has " + std::to_string(tokenizer.vocab_size()) + " ids but the model expects " +
                      std::to_string(model.vocab_size));
  }
  return tokenizer;
}

Checkpoint open_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("checkpoint directory " + dir.string() + " not found");
  return load_checkpoint(dir);
}

ModelConfig model_config_from(const Json& config) {
  if (!config.contains("model")) throw ConfigError("checkpoint config lacks a model section");
  ModelConfig model;
  merge_from_json(config["model"], model);
  model.validate();
  return model;
}

}  // namespace

RcnnRoberta::RcnnRoberta(const ModelConfig& config, Rng& init_rng)
    : config_(config), encoder_(EncoderParams::init(config, init_rng)), head_(RcnnParams::init(config, init_rng)) {}

ParameterList RcnnRoberta::parameters() const {
  ParameterList all = encoder_.named();
  for (auto& p : head_.named()) all.push_back(std::move(p));
  return all;
}

RcnnOutput RcnnRoberta::forward(Graph& g, const Batch& batch, Rng* dropout_rng) const {
  Tensor hidden = encoder_forward(g, encoder_, config_, batch, dropout_rng);
  Tensor lstm = bilstm_forward(g, hidden, batch, head_, config_, dropout_rng);
  return rcnn_forward(g, hidden, lstm, batch, head_);
}

Tensor RcnnRoberta::loss(Graph& g, const Batch& batch, std::span<const double> targets, Rng* dropout_rng) const {
  if (targets.size() != batch.size) {
    throw ContractError(std::to_string(targets.size()) + " targets for a batch of " + std::to_string(batch.size));
  }
  RcnnOutput out = forward(g, batch, dropout_rng);
  if (config_.task == TaskHead::kBinary) {
    std::vector<int> labels;
    for (double t : targets) {
      if (t != 0.0 && t != 1.0) throw LabelError("binary target " + Json(t).dump() + " is not 0 or 1");
      labels.push_back(static_cast<int>(t));
    }
    return cross_entropy(g, out.output, labels);
  }
  Tensor gold({batch.size, 1}, std::vector<double>(targets.begin(), targets.end()));
  return mse_loss(g, out.output, gold);
}

std::vector<Prediction> predict(const RcnnRoberta& model, const Tokenizer& tokenizer,
                                std::span<const std::string> texts, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("prediction batch size must be positive");
  const ModelConfig& config = model.config();
  std::vector<Prediction> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += batch_size) {
    const std::size_t end = std::min(texts.size(), start + batch_size);
    std::vector<EncodedSequence> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(tokenizer.encode(texts[i], config.max_seq_len));
    Batch batch = make_batch(seqs);
    Graph g(false);
    RcnnOutput result = model.forward(g, batch);
    if (config.task == TaskHead::kBinary) {
      Tensor probs = softmax(g, result.output, 1);
      for (std::size_t b = 0; b < batch.size; ++b) {
        Prediction p;
        p.probs = {probs.at(b, 0), probs.at(b, 1)};
        p.label = result.output.at(b, 1) > result.output.at(b, 0) ? 1 : 0;
        out.push_back(std::move(p));
      }
    } else {
      for (std::size_t b = 0; b < batch.size; ++b) {
        Prediction p;
        p.score = std::clamp(result.output.at(b, 0), kScoreMin, kScoreMax);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

Json prediction_json(const std::string& text, const Prediction& p, TaskHead task) {
  Json j;
  j["text"] = text;
  if (task == TaskHead::kBinary) {
    j["label"] = p.label;
    j["probs"] = p.probs;
  } else {
    j["score"] = p.score;
  }
  return j;
}

void save_model(const std::filesystem::path& dir, const RcnnRoberta& model, const Tokenizer& tokenizer,
                const Json& train_config, const std::string& kind) {
  save_checkpoint(dir, model.parameters(), checkpoint_config(kind, model.config(), train_config, tokenizer));
  tokenizer.save(dir / kTokenizerFile);
}

LoadedModel load_model(const std::filesystem::path& dir) {
  Checkpoint ckpt = open_checkpoint(dir);
  const std::string kind = ckpt.config.value("kind", "");
  if (kind != "rcnn-roberta") {
    throw ConfigError("checkpoint " + dir.string() + " holds a '" + kind + "' model, not a fine-tuned classifier");
  }
  ModelConfig config = model_config_from(ckpt.config);
  Tokenizer tokenizer = load_matching_tokenizer(dir, ckpt.config, config);
  Rng rng(0);
  RcnnRoberta model(config, rng);
  assign_tensors(ckpt, model.parameters());
  return {std::move(model), std::move(tokenizer), std::move(ckpt.config)};
}

void save_encoder(const std::filesystem::path& dir, const EncoderParams& encoder, const ModelConfig& config,
                  const Tokenizer& tokenizer, const Json& train_config) {
  save_checkpoint(dir, encoder.named(), checkpoint_config("mlm-encoder", config, train_config, tokenizer));
  tokenizer.save(dir / kTokenizerFile);
}

LoadedEncoder load_encoder(const std::filesystem::path& dir) {
  Checkpoint ckpt = open_checkpoint(dir);
  ModelConfig config = model_config_from(ckpt.config);
  Tokenizer tokenizer = load_matching_tokenizer(dir, ckpt.config, config);
  return {std::move(ckpt), config, std::move(tokenizer)};
}

}  // namespace rcnn
