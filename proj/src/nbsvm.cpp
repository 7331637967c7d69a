#include "rcnn/nbsvm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rcnn/errors.hpp"
#include "rcnn/random.hpp"
#include "rcnn/tokenizer.hpp"
#include "rcnn/training.hpp"

namespace rcnn {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

double sigmoid_of(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

std::vector<std::size_t> feature_ids(const std::vector<std::string>& vocab, std::string_view text) {
  std::vector<std::size_t> ids;
  for (const auto& f : nbsvm_features(text)) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), f);
    if (it != vocab.end() && *it == f) ids.push_back(static_cast<std::size_t>(it - vocab.begin()));
  }
  return ids;
}

double logit(const NbsvmModel& m, const std::vector<std::size_t>& ids) {
  double z = m.bias;
  for (auto i : ids) z += m.weights[i] * m.r[i];
  return z;
}

}  // namespace

std::vector<std::string> nbsvm_features(std::string_view text) {
  const std::string norm = normalize(text);
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < norm.size()) {
    while (i < norm.size() && is_space(norm[i])) ++i;
    std::size_t j = i;
    while (j < norm.size() && !is_space(norm[j])) ++j;
    if (j > i) words.push_back(norm.substr(i, j - i));
    i = j;
  }
  std::vector<std::string> out = words;
  for (std::size_t k = 0; k + 1 < words.size(); ++k) out.push_back(words[k] + " " + words[k + 1]);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> log_count_ratios(const std::vector<std::vector<std::size_t>>& doc_features,
                                     std::span<const int> labels, std::size_t n_features, double alpha) {
  if (doc_features.size() != labels.size()) throw ContractError("log_count_ratios: documents and labels differ");
  if (!(alpha > 0.0)) throw ConfigError("smoothing alpha must be positive");
  std::vector<double> p(n_features, alpha), q(n_features, alpha);
  bool has_pos = false, has_neg = false;
  for (std::size_t d = 0; d < labels.size(); ++d) {
    if (labels[d] != 0 && labels[d] != 1) throw LabelError("label " + std::to_string(labels[d]) + " is not 0 or 1");
    auto& counts = labels[d] == 1 ? p : q;
    (labels[d] == 1 ? has_pos : has_neg) = true;
    for (auto f : doc_features[d]) counts.at(f) += 1.0;
  }
  if (!has_pos || !has_neg) throw DataError("NBSVM needs training examples of both classes");
  const double p_norm = std::accumulate(p.begin(), p.end(), 0.0);
  const double q_norm = std::accumulate(q.begin(), q.end(), 0.0);
  std::vector<double> r(n_features);
  for (std::size_t i = 0; i < n_features; ++i) r[i] = std::log((p[i] / p_norm) / (q[i] / q_norm));
  return r;
}

NbsvmModel nbsvm_train(std::span<const LabeledExample> examples, const NbsvmOptions& options) {
  if (examples.empty()) throw DataError("NBSVM training set is empty");
  if (options.epochs == 0 || options.batch_size == 0 || !(options.learning_rate > 0.0)) {
    throw ConfigError("NBSVM epochs, batch size and learning rate must be positive");
  }
  std::vector<std::vector<std::string>> doc_strings;
  std::vector<int> labels;
  std::vector<std::string> vocab;
  for (const auto& e : examples) {
    check_target(e.target, TaskHead::kBinary);
    doc_strings.push_back(nbsvm_features(e.text));
    labels.push_back(static_cast<int>(e.target));
    vocab.insert(vocab.end(), doc_strings.back().begin(), doc_strings.back().end());
  }
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

  std::vector<std::vector<std::size_t>> docs;
  for (const auto& strings : doc_strings) {
    std::vector<std::size_t> ids;
    for (const auto& s : strings) {
      ids.push_back(static_cast<std::size_t>(std::lower_bound(vocab.begin(), vocab.end(), s) - vocab.begin()));
    }
    docs.push_back(std::move(ids));
  }

  NbsvmModel model;
  model.alpha = options.alpha;
  model.r = log_count_ratios(docs, labels, vocab.size(), options.alpha);
  model.vocab = std::move(vocab);
  model.weights.assign(model.vocab.size(), 0.0);

  const std::size_t n_features = std::max<std::size_t>(1, model.vocab.size());
  Tensor w({n_features}), b({1});
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  TrainConfig adam_config;
  adam_config.learning_rate = options.learning_rate;
  adam_config.adam_eps = options.adam_eps;
  adam_config.weight_decay = 0.0;
  Adam optimizer({{"nbsvm.weight", w}, {"nbsvm.bias", b}}, adam_config);
  Rng rng = make_stream(options.seed, "shuffle");

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      optimizer.zero_grad();
      auto gw = w.grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& ids = docs[order[k]];
        double z = b[0];
        for (auto i : ids) z += w[i] * model.r[i];
        // d(log-loss)/dz = sigmoid(z) - y
        const double dz = (sigmoid_of(z) - labels[order[k]]) * inv;
        for (auto i : ids) gw[i] += dz * model.r[i];
        b.grad()[0] += dz;
      }
      optimizer.step();
    }
  }
  std::copy_n(w.values().begin(), model.vocab.size(), model.weights.begin());
  model.bias = b[0];
  return model;
}

std::vector<NbsvmPrediction> nbsvm_predict(const NbsvmModel& model, std::span<const std::string> texts) {
  std::vector<NbsvmPrediction> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    NbsvmPrediction p;
    p.score = sigmoid_of(logit(model, feature_ids(model.vocab, t)));
    p.label = p.score > 0.5 ? 1 : 0;
    out.push_back(p);
  }
  return out;
}

Json NbsvmModel::to_json() const {
  Json j;
  j["model"] = "nbsvm";
  j["alpha"] = alpha;
  j["ngram_range"] = {1, 2};
  j["bias"] = bias;
  j["vocab"] = vocab;
  j["r"] = r;
  j["weights"] = weights;
  return j;
}

NbsvmModel NbsvmModel::from_json(const Json& j) {
  NbsvmModel m;
  try {
    m.alpha = j.at("alpha").get<double>();
    m.bias = j.at("bias").get<double>();
    m.vocab = j.at("vocab").get<std::vector<std::string>>();
    m.r = j.at("r").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed NBSVM model: ") + e.what());
  }
  if (m.r.size() != m.vocab.size() || m.weights.size() != m.vocab.size()) {
    throw DataError("NBSVM model vocabulary, ratios and weights differ in length");
  }
  return m;
}

}  // namespace rcnn
