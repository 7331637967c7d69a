#include "rcnn/config.hpp"

#include "rcnn/errors.hpp"

namespace rcnn {

std::string to_string(TaskHead task) { return task == TaskHead::kBinary ? "binary" : "score"; }

TaskHead parse_task(const std::string& name) {
  if (name == "binary") return TaskHead::kBinary;
  if (name == "score" || name == "regression") return TaskHead::kRegression;
  throw ConfigError("unknown task head '" + name + "' (expected binary or score)");
}

ModelConfig ModelConfig::base() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 64;
  c.d_ff = 256;
  c.max_seq_len = 64;
  c.vocab_size = 1000;
  return c;
}

void ModelConfig::validate() const {
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " must be a positive multiple of n_heads " +
                      std::to_string(n_heads));
  }
  if (d_ff == 0 || lstm_units == 0 || d_proj == 0) throw ConfigError("layer widths must be positive");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2 (cls + sep)");
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (dropout < 0.0 || dropout >= 1.0 || lstm_dropout < 0.0 || lstm_dropout >= 1.0) {
    throw ConfigError("dropout probabilities must lie in [0, 1)");
  }
  if (layer_norm_eps <= 0.0) throw ConfigError("layer_norm_eps must be positive");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
  if (grad_clip && *grad_clip <= 0.0) throw ConfigError("grad_clip must be positive when set");
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["max_seq_len"] = c.max_seq_len;
  j["vocab_size"] = c.vocab_size;
  j["dropout"] = c.dropout;
  j["lstm_units"] = c.lstm_units;
  j["lstm_dropout"] = c.lstm_dropout;
  j["d_proj"] = c.d_proj;
  j["layer_norm_eps"] = c.layer_norm_eps;
  j["init_std"] = c.init_std;
  j["task"] = to_string(c.task);
  return j;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["seed"] = c.seed;
  j["grad_clip"] = c.grad_clip ? Json(*c.grad_clip) : Json(nullptr);
  j["max_steps"] = c.max_steps;
  j["freeze_encoder"] = c.freeze_encoder;
  return j;
}

namespace {

template <typename T>
void take(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

void merge_from_json(const Json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  take(j, "n_layers", c.n_layers);
  take(j, "n_heads", c.n_heads);
  take(j, "d_model", c.d_model);
  take(j, "d_ff", c.d_ff);
  take(j, "max_seq_len", c.max_seq_len);
  take(j, "vocab_size", c.vocab_size);
  take(j, "dropout", c.dropout);
  take(j, "lstm_units", c.lstm_units);
  take(j, "lstm_dropout", c.lstm_dropout);
  take(j, "d_proj", c.d_proj);
  take(j, "layer_norm_eps", c.layer_norm_eps);
  take(j, "init_std", c.init_std);
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
}

void merge_from_json(const Json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  take(j, "batch_size", c.batch_size);
  take(j, "epochs", c.epochs);
  take(j, "learning_rate", c.learning_rate);
  take(j, "adam_eps", c.adam_eps);
  take(j, "weight_decay", c.weight_decay);
  take(j, "beta1", c.beta1);
  take(j, "beta2", c.beta2);
  take(j, "seed", c.seed);
  if (j.contains("grad_clip")) {
    if (j.at("grad_clip").is_null()) {
      c.grad_clip.reset();
    } else {
      double v = 0.0;
      take(j, "grad_clip", v);
      c.grad_clip = v;
    }
  }
  take(j, "max_steps", c.max_steps);
  take(j, "freeze_encoder", c.freeze_encoder);
}

}  // namespace rcnn
