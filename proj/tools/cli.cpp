#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rcnn/checkpoint.hpp"
#include "rcnn/config.hpp"
#include "rcnn/data.hpp"
#include "rcnn/errors.hpp"
#include "rcnn/grad_suite.hpp"
#include "rcnn/metrics.hpp"
#include "rcnn/model.hpp"
#include "rcnn/nbsvm.hpp"
#include "rcnn/tokenizer.hpp"
#include "rcnn/training.hpp"

namespace rcnn::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kDefaultVocab = 1000;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string shown(double v) { return Json(v).dump(); }
std::string shown(std::size_t v) { return std::to_string(v); }

constexpr const char* kRunManifestName = "run.json";

// Hash of a file, or of every regular file directly inside a directory
// except run manifests.
Json fingerprint(const fs::path& path) {
  if (fs::is_regular_file(path)) return sha256_hex(read_file(path));
  if (!fs::is_directory(path)) return nullptr;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().filename() != kRunManifestName) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Json j = Json::object();
  for (const auto& f : files) j[f.filename().string()] = sha256_hex(read_file(f));
  return j;
}

// One per run: what was asked, with what resolved settings, and what came out.
class RunManifest {
 public:
  RunManifest(std::string subcommand, int argc, const char* const* argv) {
    j_["subcommand"] = std::move(subcommand);
    j_["argv"] = std::vector<std::string>(argv, argv + argc);
    j_["seed"] = nullptr;
    j_["config"] = Json::object();
    j_["inputs"] = Json::object();
    j_["outputs"] = Json::object();
    j_["started"] = utc_now();
  }

  void set_path(fs::path p) { path_ = std::move(p); }
  const fs::path& path() const { return path_; }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  Json& config() { return j_["config"]; }
  void input(const std::string& role, const fs::path& p) { j_["inputs"][role] = {{"path", p.string()}}; }
  void output(const std::string& role, const fs::path& p) { outputs_.emplace_back(role, p); }

  void write(int exit_code, const std::string& error) {
    if (path_.empty()) return;
    for (auto& [role, value] : j_["inputs"].items()) value["sha256"] = fingerprint(value["path"].get<std::string>());
    for (const auto& [role, p] : outputs_) j_["outputs"][role] = {{"path", p.string()}, {"sha256", fingerprint(p)}};
    j_["finished"] = utc_now();
    j_["exit_code"] = exit_code;
    if (!error.empty()) j_["error"] = error;
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    write_file(path_, j_.dump(2) + "\n");
  }

 private:
  Json j_;
  fs::path path_;
  std::vector<std::pair<std::string, fs::path>> outputs_;
};

// Overrides given on the command line. Unset fields fall back to the config
// file and then to the preset.
struct ModelFlags {
  std::optional<std::string> preset;
  std::optional<std::size_t> n_layers, n_heads, d_model, d_ff, max_seq_len, lstm_units, d_proj;
  std::optional<double> dropout, lstm_dropout, init_std;
};

struct TrainFlags {
  std::optional<std::size_t> batch_size, epochs, max_steps;
  std::optional<double> learning_rate, adam_eps, weight_decay, grad_clip;
  bool freeze_encoder = false;
  bool dry_run = false;
};

struct Common {
  std::uint64_t seed = 42;
  std::string manifest;
  std::string config;
};

void add_common(CLI::App* sub, Common& c, bool with_config) {
  sub->add_option("--seed", c.seed, "run seed; init, shuffle, mask and dropout streams derive from it")
      ->capture_default_str();
  sub->add_option("--manifest", c.manifest, "where to write the run manifest");
  if (with_config) {
    sub->add_option("--config", c.config, "JSON file with optional \"preset\", \"model\" and \"train\" sections");
  }
}

void add_model_flags(CLI::App* sub, ModelFlags& f) {
  const ModelConfig d = ModelConfig::base();
  sub->add_option("--preset", f.preset, "model size preset: base (RoBERTa-base) or toy")
      ->default_str("base")
      ->check(CLI::IsMember({"base", "toy"}));
  sub->add_option("--layers", f.n_layers, "encoder layers")->default_str(shown(d.n_layers));
  sub->add_option("--heads", f.n_heads, "attention heads")->default_str(shown(d.n_heads));
  sub->add_option("--d-model", f.d_model, "hidden size")->default_str(shown(d.d_model));
  sub->add_option("--d-ff", f.d_ff, "feed-forward size")->default_str(shown(d.d_ff));
  sub->add_option("--max-seq-len", f.max_seq_len, "longest input in tokens, specials included")
      ->default_str(shown(d.max_seq_len));
  sub->add_option("--dropout", f.dropout, "encoder dropout")->default_str(shown(d.dropout));
  sub->add_option("--lstm-units", f.lstm_units, "LSTM units per direction")->default_str(shown(d.lstm_units));
  sub->add_option("--lstm-dropout", f.lstm_dropout, "dropout on LSTM inputs and outputs")
      ->default_str(shown(d.lstm_dropout));
  sub->add_option("--d-proj", f.d_proj, "projection width before pooling")->default_str(shown(d.d_proj));
  sub->add_option("--init-std", f.init_std, "weight init standard deviation")->default_str(shown(d.init_std));
}

void add_train_flags(CLI::App* sub, TrainFlags& f, bool finetuning) {
  const TrainConfig d;
  sub->add_option("--batch-size", f.batch_size, "batch size")->default_str(shown(d.batch_size));
  sub->add_option("--epochs", f.epochs, "training epochs")->default_str(shown(d.epochs));
  sub->add_option("--lr", f.learning_rate, "Adam learning rate")->default_str(shown(d.learning_rate));
  sub->add_option("--adam-eps", f.adam_eps, "Adam epsilon")->default_str(shown(d.adam_eps));
  sub->add_option("--weight-decay", f.weight_decay, "decoupled weight decay")->default_str(shown(d.weight_decay));
  sub->add_option("--grad-clip", f.grad_clip, "clip gradients to this global norm")->default_str("off");
  sub->add_option("--max-steps", f.max_steps, "stop after this many optimizer steps (0: no limit)")
      ->default_str("0");
  if (finetuning) sub->add_flag("--freeze-encoder", f.freeze_encoder, "train only the head");
  sub->add_flag("--dry-run", f.dry_run, "print the resolved configuration and stop");
}

Json read_config_file(const std::string& path) {
  if (path.empty()) return Json::object();
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path);
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  for (auto& [key, value] : j.items()) {
    if (key != "preset" && key != "model" && key != "train") {
      throw ConfigError("config file " + path + ": unknown section '" + key + "'");
    }
  }
  auto check_keys = [&](const char* section, const Json& known) {
    if (!j.contains(section)) return;
    if (!j[section].is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
    for (auto& [key, value] : j[section].items()) {
      if (!known.contains(key)) throw ConfigError(std::string("config section '") + section + "': unknown key '" + key + "'");
    }
  };
  check_keys("model", to_json(ModelConfig::base()));
  check_keys("train", to_json(TrainConfig{}));
  return j;
}

ModelConfig preset_config(const std::string& name) {
  if (name == "base") return ModelConfig::base();
  if (name == "toy") return ModelConfig::toy();
  throw ConfigError("unknown preset '" + name + "' (expected base or toy)");
}

template <typename T>
void apply(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

// Precedence: flags, then the config file, then the preset.
ModelConfig resolve_model(const ModelFlags& f, const Json& file) {
  std::string preset = "base";
  if (file.contains("preset")) preset = file["preset"].get<std::string>();
  if (f.preset) preset = *f.preset;
  ModelConfig c = preset_config(preset);
  if (file.contains("model")) merge_from_json(file["model"], c);
  apply(f.n_layers, c.n_layers);
  apply(f.n_heads, c.n_heads);
  apply(f.d_model, c.d_model);
  apply(f.d_ff, c.d_ff);
  apply(f.max_seq_len, c.max_seq_len);
  apply(f.dropout, c.dropout);
  apply(f.lstm_units, c.lstm_units);
  apply(f.lstm_dropout, c.lstm_dropout);
  apply(f.d_proj, c.d_proj);
  apply(f.init_std, c.init_std);
  return c;
}

TrainConfig resolve_train(const TrainFlags& f, const Json& file, const CLI::App* sub, std::uint64_t seed_flag) {
  TrainConfig c;
  if (file.contains("train")) merge_from_json(file["train"], c);
  apply(f.batch_size, c.batch_size);
  apply(f.epochs, c.epochs);
  apply(f.max_steps, c.max_steps);
  apply(f.learning_rate, c.learning_rate);
  apply(f.adam_eps, c.adam_eps);
  apply(f.weight_decay, c.weight_decay);
  if (f.grad_clip) c.grad_clip = *f.grad_clip;
  if (f.freeze_encoder) c.freeze_encoder = true;
  if (sub->count("--seed") > 0 || !(file.contains("train") && file["train"].contains("seed"))) c.seed = seed_flag;
  c.validate();
  return c;
}

// Encoder shape comes from the pretrained checkpoint. Explicit flags or file
// values that disagree with it are an error rather than silently dropped.
void adopt_architecture(ModelConfig& c, const ModelConfig& pretrained, const ModelFlags& f, const Json& file) {
  const Json section = file.contains("model") ? file["model"] : Json::object();
  auto take = [&](const char* key, const std::optional<std::size_t>& flag, std::size_t& field, std::size_t value) {
    std::optional<std::size_t> asked = flag;
    if (!asked && section.contains(key)) asked = section[key].get<std::size_t>();
    if (asked && *asked != value) {
      throw ConfigError(std::string(key) + " " + std::to_string(*asked) + " differs from the pretrained encoder's " +
                        std::to_string(value));
    }
    field = value;
  };
  take("n_layers", f.n_layers, c.n_layers, pretrained.n_layers);
  take("n_heads", f.n_heads, c.n_heads, pretrained.n_heads);
  take("d_model", f.d_model, c.d_model, pretrained.d_model);
  take("d_ff", f.d_ff, c.d_ff, pretrained.d_ff);
  take("max_seq_len", f.max_seq_len, c.max_seq_len, pretrained.max_seq_len);
}

std::string jsonl(std::span<const StepRecord> log) { return to_jsonl(log); }

Json loss_summary(std::span<const StepRecord> log) {
  Json j;
  j["steps"] = log.size();
  j["first_loss"] = log.empty() ? Json(nullptr) : Json(log.front().loss);
  j["last_loss"] = log.empty() ? Json(nullptr) : Json(log.back().loss);
  return j;
}

Tokenizer tokenizer_for(const std::string& path, std::span<const std::string> texts, std::size_t vocab_size,
                        std::ostream& err) {
  if (!path.empty()) return Tokenizer::load(path);
  err << "training a " << vocab_size << "-id tokenizer on the input texts\n";
  return Tokenizer::train(texts, vocab_size);
}

void write_report(const std::string& path, const Json& report, RunManifest& manifest) {
  if (path.empty()) return;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, report.dump(2) + "\n");
  manifest.output("report", p);
}

std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"RoBERTa encoder with a recurrent-convolutional head for figurative language detection"};
  app.name("rcnn");
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  ModelFlags model_flags;
  TrainFlags train_flags;

  // bpe-train
  std::string corpus_path, out_path, tokenizer_path;
  std::size_t vocab_size = kDefaultVocab;
  auto* bpe = app.add_subcommand("bpe-train", "learn a byte-level BPE vocabulary from a text corpus");
  bpe->add_option("--corpus", corpus_path, "text file, one sentence per line")->required();
  bpe->add_option("--vocab-size", vocab_size, "vocabulary size, specials and bytes included")->capture_default_str();
  bpe->add_option("--out", out_path, "tokenizer JSON to write")->required();
  add_common(bpe, common, false);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "masked-language-model pretraining of the encoder");
  pre->add_option("--corpus", corpus_path, "text file, one sentence per line")->required();
  pre->add_option("--out", out_path, "checkpoint directory to write")->required();
  pre->add_option("--tokenizer", tokenizer_path, "tokenizer JSON (default: learn one from the corpus)");
  pre->add_option("--vocab-size", vocab_size, "vocabulary size when learning a tokenizer")->capture_default_str();
  add_common(pre, common, true);
  add_model_flags(pre, model_flags);
  add_train_flags(pre, train_flags, false);

  // finetune
  std::string train_path, task_name = "binary", init_path;
  auto* fine = app.add_subcommand("finetune", "train the encoder and head on a labeled TSV file");
  fine->add_option("--train", train_path, "TSV with header id<TAB>label<TAB>text")->required();
  fine->add_option("--task", task_name, "binary (0/1 labels) or score (integers -5..5)")
      ->capture_default_str()
      ->check(CLI::IsMember({"binary", "score"}));
  fine->add_option("--init", init_path, "pretrained encoder checkpoint directory");
  fine->add_option("--out", out_path, "checkpoint directory to write")->required();
  fine->add_option("--tokenizer", tokenizer_path, "tokenizer JSON when not starting from --init");
  fine->add_option("--vocab-size", vocab_size, "vocabulary size when learning a tokenizer")->capture_default_str();
  add_common(fine, common, true);
  add_model_flags(fine, model_flags);
  add_train_flags(fine, train_flags, true);

  // evaluate
  std::string test_path, checkpoint_path, report_path;
  std::optional<std::string> expected_task;
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a labeled TSV file");
  eval->add_option("--test", test_path, "TSV with header id<TAB>label<TAB>text")->required();
  eval->add_option("--checkpoint", checkpoint_path, "fine-tuned checkpoint directory")->required();
  eval->add_option("--report", report_path, "metrics JSON to write")->required();
  eval->add_option("--task", expected_task, "fail unless the checkpoint has this head (binary or score)");
  add_common(eval, common, false);

  // predict
  std::string input_path;
  std::size_t predict_batch = 32;
  auto* pred = app.add_subcommand("predict", "label texts, one per line, printing JSON lines");
  pred->add_option("--checkpoint", checkpoint_path, "fine-tuned checkpoint directory")->required();
  pred->add_option("--input", input_path, "text file (default: stdin)");
  pred->add_option("--batch-size", predict_batch, "texts per forward pass")->capture_default_str();
  add_common(pred, common, false);

  // gradcheck
  bool full = false, verbose = false;
  std::size_t grad_seeds = 1;
  auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  grad->add_flag("--full", full, "20 seeds instead of --seeds");
  grad->add_option("--seeds", grad_seeds, "consecutive seeds starting at --seed")->capture_default_str();
  grad->add_flag("--verbose", verbose, "print every check as a JSON line");
  add_common(grad, common, false);

  // baseline-nbsvm
  NbsvmOptions nb;
  std::string model_out;
  auto* base = app.add_subcommand("baseline-nbsvm", "naive-Bayes weighted n-gram logistic regression baseline");
  base->add_option("--train", train_path, "binary TSV training file")->required();
  base->add_option("--test", test_path, "binary TSV test file")->required();
  base->add_option("--report", report_path, "metrics JSON to write")->required();
  base->add_option("--model-out", model_out, "also write the trained model as JSON");
  base->add_option("--alpha", nb.alpha, "count smoothing")->capture_default_str();
  base->add_option("--lr", nb.learning_rate, "Adam learning rate")->capture_default_str();
  base->add_option("--epochs", nb.epochs, "training epochs")->capture_default_str();
  base->add_option("--batch-size", nb.batch_size, "minibatch size")->capture_default_str();
  add_common(base, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n\n";
    const auto selected = app.get_subcommands();
    err << (selected.empty() ? app.help() : selected.back()->help());
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest(sub->get_name(), argc, argv);
  manifest.seed(common.seed);

  const auto default_manifest = [&]() -> fs::path {
    if (!common.manifest.empty()) return common.manifest;
    if (sub == pre || sub == fine) return fs::path(out_path) / kRunManifestName;
    if (sub == bpe) return out_path + ".run.json";
    if (sub == eval || sub == base) return report_path + ".run.json";
    return "rcnn-" + sub->get_name() + ".run.json";
  };
  manifest.set_path(default_manifest());

  int code = kExitOk;
  std::string message;
  try {
    if (sub == bpe) {
      manifest.input("corpus", corpus_path);
      manifest.config() = {{"vocab_size", vocab_size}};
      const auto corpus = load_corpus(corpus_path);
      if (corpus.empty()) throw DataError(corpus_path + ": corpus has no text");
      const Tokenizer tok = Tokenizer::train(corpus, vocab_size);
      const fs::path p(out_path);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      tok.save(p);
      manifest.output("tokenizer", p);
      out << Json{{"vocab_size", tok.vocab_size()}, {"merges", tok.merges().size()}}.dump() << "\n";
    } else if (sub == pre) {
      const Json file = read_config_file(common.config);
      if (!common.config.empty()) manifest.input("config", common.config);
      ModelConfig mcfg = resolve_model(model_flags, file);
      const TrainConfig tcfg = resolve_train(train_flags, file, sub, common.seed);
      manifest.input("corpus", corpus_path);
      const auto corpus = load_corpus(corpus_path);
      if (!tokenizer_path.empty()) manifest.input("tokenizer", tokenizer_path);
      const Tokenizer tok = tokenizer_for(tokenizer_path, corpus, vocab_size, err);
      mcfg.vocab_size = tok.vocab_size();
      mcfg.validate();
      manifest.seed(tcfg.seed);
      manifest.config() = {{"model", to_json(mcfg)}, {"train", to_json(tcfg)}};
      if (train_flags.dry_run) {
        out << manifest.config().dump() << "\n";
        manifest.write(kExitOk, "");
        return kExitOk;
      }
      const PretrainResult result = pretrain_mlm(corpus, tok, mcfg, tcfg);
      save_encoder(out_path, result.encoder, mcfg, tok, to_json(tcfg));
      write_file(fs::path(out_path) / "train_log.jsonl", jsonl(result.log));
      manifest.output("checkpoint", out_path);
      out << loss_summary(result.log).dump() << "\n";
    } else if (sub == fine) {
      const Json file = read_config_file(common.config);
      if (!common.config.empty()) manifest.input("config", common.config);
      ModelConfig mcfg = resolve_model(model_flags, file);
      mcfg.task = parse_task(task_name);
      const TrainConfig tcfg = resolve_train(train_flags, file, sub, common.seed);
      manifest.input("train", train_path);
      const Dataset data = load_dataset(train_path, mcfg.task);
      for (const auto& w : data.warnings) err << "warning: " << w << "\n";
      std::optional<LoadedEncoder> pretrained;
      std::optional<Tokenizer> tok;
      if (!init_path.empty()) {
        manifest.input("init", init_path);
        pretrained = load_encoder(init_path);
        adopt_architecture(mcfg, pretrained->config, model_flags, file);
        tok = pretrained->tokenizer;
        if (!tokenizer_path.empty()) throw ConfigError("--tokenizer cannot be combined with --init");
      } else {
        if (!tokenizer_path.empty()) manifest.input("tokenizer", tokenizer_path);
        tok = tokenizer_for(tokenizer_path, data.texts(), vocab_size, err);
      }
      mcfg.vocab_size = tok->vocab_size();
      mcfg.validate();
      manifest.seed(tcfg.seed);
      manifest.config() = {{"model", to_json(mcfg)}, {"train", to_json(tcfg)}};
      if (train_flags.dry_run) {
        out << manifest.config().dump() << "\n";
        manifest.write(kExitOk, "");
        return kExitOk;
      }
      err << "fine-tuning on " << data.examples.size() << " examples\n";
      FinetuneResult result =
          finetune(data.examples, *tok, mcfg, tcfg, pretrained ? &pretrained->checkpoint : nullptr,
                   [&](std::size_t epoch, double loss) { err << "epoch " << epoch << " loss " << loss << "\n"; });
      save_model(out_path, result.model, *tok, to_json(tcfg));
      write_file(fs::path(out_path) / "train_log.jsonl", jsonl(result.log));
      manifest.output("checkpoint", out_path);
      Json summary = loss_summary(result.log);
      summary["epoch_losses"] = result.epoch_losses;
      out << summary.dump() << "\n";
    } else if (sub == eval) {
      manifest.input("checkpoint", checkpoint_path);
      manifest.input("test", test_path);
      LoadedModel lm = load_model(checkpoint_path);
      const TaskHead task = lm.model.config().task;
      manifest.config() = {{"task", to_string(task)}};
      if (expected_task && parse_task(*expected_task) != task) {
        throw DataError("checkpoint " + checkpoint_path + " has a " + to_string(task) + " head but --task " +
                        *expected_task + " was requested");
      }
      const Dataset data = load_dataset(test_path, task);
      for (const auto& w : data.warnings) err << "warning: " << w << "\n";
      const auto texts = data.texts();
      const auto preds = predict(lm.model, lm.tokenizer, texts);
      Json report;
      if (task == TaskHead::kBinary) {
        std::vector<int> labels, golds;
        std::vector<double> scores;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          labels.push_back(preds[i].label);
          scores.push_back(preds[i].probs[1]);
          golds.push_back(static_cast<int>(data.examples[i].target));
        }
        report = to_json(classification_metrics(labels, scores, golds));
      } else {
        std::vector<double> scores;
        for (const auto& p : preds) scores.push_back(p.score);
        report = to_json(regression_metrics(scores, data.targets()));
      }
      write_report(report_path, report, manifest);
      out << report.dump() << "\n";
    } else if (sub == pred) {
      manifest.input("checkpoint", checkpoint_path);
      LoadedModel lm = load_model(checkpoint_path);
      std::vector<std::string> texts;
      if (input_path.empty()) {
        texts = read_lines(in);
      } else {
        manifest.input("input", input_path);
        std::istringstream file(read_file(input_path));
        texts = read_lines(file);
      }
      manifest.config() = {{"task", to_string(lm.model.config().task)}, {"batch_size", predict_batch}};
      const auto preds = predict(lm.model, lm.tokenizer, texts, predict_batch);
      for (std::size_t i = 0; i < preds.size(); ++i) {
        out << prediction_json(texts[i], preds[i], lm.model.config().task).dump() << "\n";
      }
    } else if (sub == grad) {
      GradSuiteOptions opts;
      opts.seeds = full ? 20 : grad_seeds;
      opts.first_seed = common.seed;
      manifest.config() = {{"seeds", opts.seeds},
                           {"stack_model", to_json(opts.stack_config)},
                           {"stack_init_std", opts.stack_init_std},
                           {"tolerance", kGradTolerance}};
      const GradSuiteReport report = run_grad_suite(opts);
      if (verbose) {
        for (const auto& e : report.entries) {
          out << Json{{"check", e.name}, {"seed", e.seed}, {"relative_error", e.relative_error},
                      {"tensor", e.worst_tensor}}
                     .dump()
              << "\n";
        }
      }
      Json summary = report.to_json();
      summary["tolerance"] = kGradTolerance;
      summary["passed"] = report.max_relative_error < kGradTolerance;
      out << summary.dump() << "\n";
      if (report.max_relative_error >= kGradTolerance) {
        throw NumericError("max relative gradient error " + shown(report.max_relative_error) + " exceeds " +
                           shown(kGradTolerance));
      }
    } else if (sub == base) {
      nb.seed = common.seed;
      manifest.input("train", train_path);
      manifest.input("test", test_path);
      manifest.config() = {{"alpha", nb.alpha},
                           {"learning_rate", nb.learning_rate},
                           {"epochs", nb.epochs},
                           {"batch_size", nb.batch_size},
                           {"adam_eps", nb.adam_eps},
                           {"ngram_range", {1, 2}}};
      const Dataset train = load_dataset(train_path, TaskHead::kBinary);
      const Dataset test = load_dataset(test_path, TaskHead::kBinary);
      const NbsvmModel model = nbsvm_train(train.examples, nb);
      const auto texts = test.texts();
      const auto preds = nbsvm_predict(model, texts);
      std::vector<int> labels, golds;
      std::vector<double> scores;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        labels.push_back(preds[i].label);
        scores.push_back(preds[i].score);
        golds.push_back(static_cast<int>(test.examples[i].target));
      }
      Json report = to_json(classification_metrics(labels, scores, golds));
      write_report(report_path, report, manifest);
      if (!model_out.empty()) {
        write_file(model_out, model.to_json().dump() + "\n");
        manifest.output("model", model_out);
      }
      out << report.dump() << "\n";
    }
  } catch (const NumericError& e) {
    code = kExitNumeric;
    message = e.what();
  } catch (const DataError& e) {
    code = kExitData;
    message = e.what();
  } catch (const std::exception& e) {
    code = kExitUsage;
    message = e.what();
  }
  if (!message.empty()) err << "error: " << message << "\n";
  try {
    manifest.write(code, message);
  } catch (const std::exception& e) {
    err << "error: cannot write run manifest: " << e.what() << "\n";
    if (code == kExitOk) code = kExitData;
  }
  return code;
}

}  // namespace rcnn::cli
