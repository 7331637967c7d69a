#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "rcnn/config.hpp"

namespace rcnn {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ClassificationReport {
  std::size_t n = 0;
  Confusion counts;
  double accuracy = 0.0;
  // Positive (figurative) class.
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  // Unweighted mean over both classes.
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  std::optional<double> auc;
  std::string auc_error;  // why auc is absent
};

struct RegressionReport {
  std::size_t n = 0;
  double cosine = 0.0;
  double mse = 0.0;
};

// Probability that a random positive outscores a random negative, ties 0.5,
// computed from average ranks. Throws DataError when a class is absent.
double auc(std::span<const double> scores, std::span<const int> golds);

// Precision is 0 when nothing is predicted positive, recall 0 when nothing is
// gold positive, f1 0 when both are 0. A single-class gold set leaves auc
// empty with auc_error set.
ClassificationReport classification_metrics(std::span<const int> predictions, std::span<const double> scores,
                                            std::span<const int> golds);

// Cosine between the prediction and gold vectors plus mean squared error.
// Throws DataError when either vector has zero norm.
RegressionReport regression_metrics(std::span<const double> predictions, std::span<const double> golds);

Json to_json(const ClassificationReport& report);
Json to_json(const RegressionReport& report);

}  // namespace rcnn
