#include "rcnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rcnn/errors.hpp"

namespace rcnn {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " entries");
  }
  if (a == 0) throw ContractError(std::string(what) + ": no examples");
}

void check_binary(std::span<const int> labels, const char* what) {
  for (int l : labels) {
    if (l != 0 && l != 1) throw LabelError(std::string(what) + ": label " + std::to_string(l) + " is not 0 or 1");
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

double auc(std::span<const double> scores, std::span<const int> golds) {
  check_sizes(scores.size(), golds.size(), "auc");
  check_binary(golds, "auc");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(golds.begin(), golds.end(), 1));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc is undefined when only one class is present");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("auc: non-finite score");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Tied scores share the mean of their 1-based ranks; ranks are multiples of
  // 0.5, so the sums below are exact.
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (golds[order[k]] == 1) positive_rank_sum += rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

ClassificationReport classification_metrics(std::span<const int> predictions, std::span<const double> scores,
                                            std::span<const int> golds) {
  check_sizes(predictions.size(), golds.size(), "classification_metrics");
  check_sizes(scores.size(), golds.size(), "classification_metrics");
  check_binary(predictions, "classification_metrics");
  check_binary(golds, "classification_metrics");

  ClassificationReport r;
  r.n = golds.size();
  for (std::size_t i = 0; i < r.n; ++i) {
    const bool p = predictions[i] == 1, g = golds[i] == 1;
    if (p && g) ++r.counts.tp;
    else if (p) ++r.counts.fp;
    else if (g) ++r.counts.fn;
    else ++r.counts.tn;
  }
  const auto& c = r.counts;
  r.accuracy = ratio(c.tp + c.tn, r.n);
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = harmonic(r.precision, r.recall);
  const double neg_precision = ratio(c.tn, c.tn + c.fn);
  const double neg_recall = ratio(c.tn, c.tn + c.fp);
  r.macro_precision = (r.precision + neg_precision) / 2.0;
  r.macro_recall = (r.recall + neg_recall) / 2.0;
  r.macro_f1 = (r.f1 + harmonic(neg_precision, neg_recall)) / 2.0;
  try {
    r.auc = auc(scores, golds);
  } catch (const DataError& e) {
    r.auc_error = e.what();
  }
  return r;
}

RegressionReport regression_metrics(std::span<const double> predictions, std::span<const double> golds) {
  check_sizes(predictions.size(), golds.size(), "regression_metrics");
  double dot = 0.0, pp = 0.0, gg = 0.0, se = 0.0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    dot += predictions[i] * golds[i];
    pp += predictions[i] * predictions[i];
    gg += golds[i] * golds[i];
    se += (predictions[i] - golds[i]) * (predictions[i] - golds[i]);
  }
  if (pp == 0.0 || gg == 0.0) throw DataError("cosine similarity is undefined for a zero vector");
  RegressionReport r;
  r.n = golds.size();
  r.cosine = dot / (std::sqrt(pp) * std::sqrt(gg));
  r.mse = se / static_cast<double>(r.n);
  return r;
}

Json to_json(const ClassificationReport& r) {
  Json j;
  j["task"] = "binary";
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["auc"] = r.auc ? Json(*r.auc) : Json(nullptr);
  if (!r.auc) j["auc_error"] = r.auc_error;
  j["macro"] = {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}};
  j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}};
  return j;
}

Json to_json(const RegressionReport& r) {
  Json j;
  j["task"] = "score";
  j["n"] = r.n;
  j["cosine"] = r.cosine;
  j["mse"] = r.mse;
  return j;
}

}  // namespace rcnn
