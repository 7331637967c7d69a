#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rcnn/config.hpp"
#include "rcnn/data.hpp"

namespace rcnn {

// Distinct unigrams and bigrams of normalize(text), split on whitespace.
// Bigrams join their words with one space. Sorted, no duplicates.
std::vector<std::string> nbsvm_features(std::string_view text);

struct NbsvmOptions {
  double alpha = 1.0;
  double learning_rate = 1e-3;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
};

// Logistic regression over binarized n-gram indicators scaled by the
// naive-Bayes log-count ratio r.
struct NbsvmModel {
  double alpha = 1.0;
  std::vector<std::string> vocab;  // sorted; position is the feature id
  std::vector<double> r;
  std::vector<double> weights;
  double bias = 0.0;

  Json to_json() const;
  static NbsvmModel from_json(const Json& j);
};

struct NbsvmPrediction {
  int label = 0;       // score > 0.5
  double score = 0.5;  // sigmoid output
};

// r_i = log(((p_i+α)/‖p+α‖₁) / ((q_i+α)/‖q+α‖₁)) with p, q the per-class
// document counts of each feature. Throws DataError unless both classes occur.
std::vector<double> log_count_ratios(const std::vector<std::vector<std::size_t>>& doc_features,
                                     std::span<const int> labels, std::size_t n_features, double alpha);

// Weights and bias start at zero and train with Adam on mean log-loss over
// seeded minibatches.
NbsvmModel nbsvm_train(std::span<const LabeledExample> examples, const NbsvmOptions& options = {});

// Unseen n-grams are ignored; empty text scores sigmoid(bias).
std::vector<NbsvmPrediction> nbsvm_predict(const NbsvmModel& model, std::span<const std::string> texts);

}  // namespace rcnn
