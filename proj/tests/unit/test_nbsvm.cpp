#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fixtures.hpp"
#include "rcnn/errors.hpp"
#include "rcnn/nbsvm.hpp"

using namespace rcnn;
using namespace rcnn::testing;

namespace {

std::vector<LabeledExample> examples(const std::vector<std::pair<std::string, int>>& rows) {
  std::vector<LabeledExample> out;
  for (const auto& [text, y] : rows) out.push_back({std::to_string(out.size()), text, static_cast<double>(y)});
  return out;
}

double ratio_of(const NbsvmModel& m, const std::string& feature) {
  auto it = std::lower_bound(m.vocab.begin(), m.vocab.end(), feature);
  REQUIRE(it != m.vocab.end());
  REQUIRE(*it == feature);
  return m.r[static_cast<std::size_t>(it - m.vocab.begin())];
}

}  // namespace

TEST_CASE("features are lowercased unigrams and bigrams") {
  CHECK(nbsvm_features("Great  Movie great") ==
        std::vector<std::string>{"great", "great movie", "movie", "movie great"});
  CHECK(nbsvm_features("").empty());
  CHECK(nbsvm_features("one") == std::vector<std::string>{"one"});
}

TEST_CASE("log-count ratios match hand counts on four documents") {
  // features: 0 great, 1 bad, 2 movie, 3 plot
  // class 1: {great, movie}, {great, movie, plot}; class 0: {bad, movie}, {bad}
  // p+1 = [3,1,3,2] (sum 9), q+1 = [1,3,2,1] (sum 7)
  const std::vector<std::vector<std::size_t>> docs = {{0, 2}, {0, 2, 3}, {1, 2}, {1}};
  const std::vector<int> labels = {1, 1, 0, 0};
  auto r = log_count_ratios(docs, labels, 4, 1.0);
  const std::vector<double> expected = {std::log(7.0 / 3.0), std::log(7.0 / 27.0), std::log(7.0 / 6.0),
                                        std::log(14.0 / 9.0)};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r[i] - expected[i]) < 1e-10);

  // Same corpus as text: every unigram and bigram gets its ratio.
  auto model = nbsvm_train(examples({{"great movie", 1}, {"great movie plot", 1}, {"bad movie", 0}, {"bad", 0}}));
  CHECK(model.vocab == std::vector<std::string>{"bad", "bad movie", "great", "great movie", "movie", "movie plot",
                                                "plot"});
  // p+1 = [1,1,3,3,3,2,2] (sum 15), q+1 = [3,2,1,1,2,1,1] (sum 11)
  CHECK(std::abs(ratio_of(model, "great") - std::log(33.0 / 15.0)) < 1e-10);
  CHECK(std::abs(ratio_of(model, "bad") - std::log(11.0 / 45.0)) < 1e-10);
  CHECK(std::abs(ratio_of(model, "movie") - std::log(33.0 / 30.0)) < 1e-10);
  CHECK(std::abs(ratio_of(model, "bad movie") - std::log(11.0 / 30.0)) < 1e-10);
}

TEST_CASE("presence is binarized per document") {
  auto once = nbsvm_train(examples({{"great great", 1}, {"meh", 0}}));
  auto twice = nbsvm_train(examples({{"great great great", 1}, {"meh", 0}}));
  CHECK(ratio_of(once, "great") == ratio_of(twice, "great"));
}

TEST_CASE("ratio signs and the smoothing limit") {
  auto rows = examples({{"a great day", 1}, {"great fun", 1}, {"a dull day", 0}, {"dull", 0}});
  auto model = nbsvm_train(rows);
  CHECK(ratio_of(model, "great") > 0.0);
  CHECK(ratio_of(model, "dull") < 0.0);
  for (double v : model.r) CHECK(std::isfinite(v));

  NbsvmOptions big;
  big.alpha = 1e12;
  auto smooth = nbsvm_train(rows, big);
  for (double v : smooth.r) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("training input errors") {
  CHECK_THROWS_AS(nbsvm_train(examples({{"a", 1}, {"b", 1}})), DataError);
  CHECK_THROWS_AS(nbsvm_train(std::vector<LabeledExample>{}), DataError);
  CHECK_THROWS_AS(nbsvm_train(examples({{"a", 1}, {"b", 3}})), LabelError);
  NbsvmOptions bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(nbsvm_train(examples({{"a", 1}, {"b", 0}}), bad), ConfigError);
}

TEST_CASE("separable set is fit within five epochs at lr 1e-3") {
  Dataset data = load_dataset(data_path("separable.tsv"), TaskHead::kBinary);
  NbsvmOptions options;
  CHECK(options.learning_rate == 1e-3);
  CHECK(options.epochs == 5);
  auto model = nbsvm_train(data.examples, options);
  auto preds = nbsvm_predict(model, data.texts());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    correct += preds[i].label == static_cast<int>(data.examples[i].target);
    CHECK(preds[i].score > 0.0);
    CHECK(preds[i].score < 1.0);
  }
  CHECK(correct == data.examples.size());
}

TEST_CASE("prediction edge cases") {
  auto model = nbsvm_train(examples({{"oh great #not", 1}, {"the bus came", 0}, {"wow thanks #not", 1}}));
  std::vector<std::string> texts = {"", "entirely unseen words", "#not"};
  auto preds = nbsvm_predict(model, texts);
  const double bias_only = 1.0 / (1.0 + std::exp(-model.bias));
  CHECK(preds[0].score == bias_only);
  CHECK(preds[1].score == bias_only);
  CHECK(preds[2].score > bias_only);
  CHECK(preds[2].label == 1);

  NbsvmModel extreme = model;
  extreme.bias = 800.0;
  CHECK(nbsvm_predict(extreme, texts)[0].score <= 1.0);
  extreme.bias = -800.0;
  CHECK(nbsvm_predict(extreme, texts)[0].score >= 0.0);
  CHECK(nbsvm_predict(extreme, texts)[0].label == 0);
}

TEST_CASE("training is deterministic and the model round-trips through JSON") {
  Dataset data = load_dataset(data_path("semeval_train.tsv"), TaskHead::kBinary);
  auto a = nbsvm_train(data.examples);
  auto b = nbsvm_train(data.examples);
  CHECK(a.to_json().dump() == b.to_json().dump());

  NbsvmOptions other;
  other.seed = 7;
  other.batch_size = 8;
  CHECK(nbsvm_train(data.examples, other).to_json().dump() != a.to_json().dump());

  auto back = NbsvmModel::from_json(Json::parse(a.to_json().dump()));
  CHECK(back.weights == a.weights);
  CHECK(back.r == a.r);
  CHECK(back.bias == a.bias);
  CHECK(back.vocab == a.vocab);
  CHECK_THROWS_AS(NbsvmModel::from_json(Json::parse(R"({"alpha":1})")), DataError);
}
