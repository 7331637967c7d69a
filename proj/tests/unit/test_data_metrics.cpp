#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "rcnn/data.hpp"
#include "rcnn/errors.hpp"
#include "rcnn/metrics.hpp"

using namespace rcnn;
using namespace rcnn::testing;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

template <typename E, typename F>
void expect_error_mentions(F&& f, const std::string& needle) {
  try {
    f();
    FAIL("expected an error");
  } catch (const E& e) {
    INFO(e.what());
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

const std::string kHeader = "id\tlabel\ttext\n";

}  // namespace

TEST_CASE("two-row file loads in order with class counts") {
  Dataset d = parse_dataset(kHeader + "a\t1\tSo FUN #not\nb\t0\tthe bus came\n", TaskHead::kBinary);
  REQUIRE(d.examples.size() == 2);
  CHECK(d.examples[0].id == "a");
  CHECK(d.examples[0].text == "So FUN #not");
  CHECK(d.examples[0].target == 1.0);
  CHECK(d.examples[1].target == 0.0);
  CHECK(d.counts == std::map<int, std::size_t>{{0, 1}, {1, 1}});
  CHECK(d.warnings.empty());
  CHECK(d.texts() == std::vector<std::string>{"So FUN #not", "the bus came"});
}

TEST_CASE("loader errors name the line") {
  expect_error_mentions<LabelError>([] { parse_dataset(kHeader + "a\t1\tok\nb\t7\tgood\n", TaskHead::kRegression); },
                                    ":3:");
  expect_error_mentions<LabelError>([] { parse_dataset(kHeader + "a\t2\tok\n", TaskHead::kBinary); }, ":2:");
  expect_error_mentions<LabelError>([] { parse_dataset(kHeader + "a\t1.5\tok\n", TaskHead::kBinary); }, ":2:");
  expect_error_mentions<DataError>([] { parse_dataset(kHeader + "a\t1\tok\tmore\n", TaskHead::kBinary); }, ":2:");
  expect_error_mentions<DataError>([] { parse_dataset(kHeader + "a\t1\n", TaskHead::kBinary); }, ":2:");
  expect_error_mentions<DataError>([] { parse_dataset(kHeader + "a\t1\t\n", TaskHead::kBinary); }, ":2:");
  expect_error_mentions<DataError>([] { parse_dataset(kHeader + "\t1\tx\n", TaskHead::kBinary); }, ":2:");
  expect_error_mentions<EncodingError>([] { parse_dataset(kHeader + "a\t1\tbad \xff byte\n", TaskHead::kBinary); },
                                       ":2:");
  expect_error_mentions<DataError>([] { parse_dataset("label\tid\ttext\n", TaskHead::kBinary); }, ":1:");
  CHECK_THROWS_AS(load_dataset("/nonexistent/file.tsv", TaskHead::kBinary), DataError);
}

TEST_CASE("score schema accepts -5..5 and duplicates only warn") {
  Dataset d = parse_dataset(kHeader + "x\t-5\tawful\ny\t5\tgreat\nx\t0\tmeh\n", TaskHead::kRegression);
  CHECK(d.examples.size() == 3);
  CHECK(d.counts.at(-5) == 1);
  REQUIRE(d.warnings.size() == 1);
  CHECK(d.warnings[0].find("duplicate id 'x'") != std::string::npos);
}

TEST_CASE("shared-task style train and test files load as separate binary splits") {
  Dataset train = load_dataset(data_path("semeval_train.tsv"), TaskHead::kBinary);
  Dataset test = load_dataset(data_path("semeval_test.tsv"), TaskHead::kBinary);
  CHECK(train.examples.size() == 60);
  CHECK(test.examples.size() == 20);
  CHECK(train.counts.at(0) + train.counts.at(1) == 60);
  for (const auto& e : test.examples) CHECK(e.id.rfind("test-", 0) == 0);
  Dataset scores = load_dataset(data_path("scores.tsv"), TaskHead::kRegression);
  CHECK(scores.examples.size() == 40);
}

TEST_CASE("corpus loader skips blank lines") {
  auto corpus = load_corpus(data_path("toy_corpus.txt"));
  CHECK(corpus.size() == 100);
}

TEST_CASE("classification worked examples") {
  SUBCASE("all correct") {
    std::vector<int> y = {1, 0, 1, 0, 0};
    std::vector<double> s = {0.9, 0.2, 0.8, 0.1, 0.3};
    auto r = classification_metrics(y, s, y);
    CHECK(r.accuracy == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(*r.auc == 1.0);
  }
  SUBCASE("one of each confusion cell") {
    std::vector<int> golds = {1, 1, 0, 0}, preds = {1, 0, 1, 0};
    std::vector<double> s = {0.9, 0.1, 0.8, 0.2};
    auto r = classification_metrics(preds, s, golds);
    CHECK(r.counts.tp == 1);
    CHECK(r.counts.fp == 1);
    CHECK(r.counts.fn == 1);
    CHECK(r.counts.tn == 1);
    CHECK(r.precision == 0.5);
    CHECK(r.recall == 0.5);
    CHECK(r.f1 == 0.5);
    CHECK(r.accuracy == 0.5);
    CHECK(r.macro_f1 == 0.5);
  }
  SUBCASE("nothing predicted positive") {
    std::vector<int> golds = {1, 0}, preds = {0, 0};
    std::vector<double> s = {0.4, 0.3};
    auto r = classification_metrics(preds, s, golds);
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
  }
}

TEST_CASE("auc worked examples and errors") {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  CHECK(auc(s, y) == 0.75);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1, 1, 1}), DataError);
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 0}), ContractError);

  auto r = classification_metrics(std::vector<int>{1, 1}, std::vector<double>{0.7, 0.9}, std::vector<int>{1, 1});
  CHECK_FALSE(r.auc.has_value());
  CHECK(!r.auc_error.empty());
  CHECK(r.accuracy == 1.0);
  CHECK(to_json(r)["auc"].is_null());
}

TEST_CASE("auc equals the pairwise oracle exactly on 1000 random sets") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> s(n);
    std::vector<int> y(n);
    // Coarse scores so ties are common.
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 12) / 11.0;
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    REQUIRE(auc(s, y) == pairwise_auc(s, y));
  }
}

TEST_CASE("auc is invariant to strictly monotone transforms and to order") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::round(n(rng) * 4) / 4;
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    const double base = auc(s, y);
    std::vector<double> t(s.size());
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3 * v) - 7; });
    CHECK(auc(t, y) == base);

    std::vector<std::size_t> perm(s.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> ps;
    std::vector<int> py;
    for (auto i : perm) {
      ps.push_back(s[i]);
      py.push_back(y[i]);
    }
    CHECK(auc(ps, py) == base);
    auto r1 = classification_metrics(y, s, y), r2 = classification_metrics(py, ps, py);
    CHECK(r1.accuracy == r2.accuracy);
    CHECK(r1.f1 == r2.f1);
  }
}

TEST_CASE("confusion metrics match an independent oracle over 100 random trials") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    std::vector<int> g(n), p(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<int>(rng() % 2);
      p[i] = static_cast<int>(rng() % 2);
      s[i] = static_cast<double>(rng() % 1000) / 1000.0;
    }
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += g[i] && p[i];
      fp += !g[i] && p[i];
      fn += g[i] && !p[i];
      tn += !g[i] && !p[i];
    }
    const double pre = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = pre + rec > 0 ? 2 * pre * rec / (pre + rec) : 0.0;
    auto r = classification_metrics(p, s, g);
    REQUIRE(r.counts.tp == tp);
    REQUIRE(r.counts.fp == fp);
    REQUIRE(r.counts.fn == fn);
    REQUIRE(r.counts.tn == tn);
    CHECK(r.accuracy == (tp + tn) / static_cast<double>(n));
    CHECK(r.precision == pre);
    CHECK(r.recall == rec);
    CHECK(r.f1 == f1);
    if (r.precision + r.recall > 0) {
      CHECK(std::abs(r.f1 - 2 * r.precision * r.recall / (r.precision + r.recall)) < 1e-12);
    }
    for (double v : {r.accuracy, r.precision, r.recall, r.f1, r.macro_precision, r.macro_recall, r.macro_f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("regression worked examples") {
  std::vector<double> gold = {2, -1, 4};
  auto same = regression_metrics(gold, gold);
  CHECK(same.cosine == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(same.mse == 0.0);
  std::vector<double> neg = {-2, 1, -4};
  CHECK(regression_metrics(neg, gold).cosine == doctest::Approx(-1.0).epsilon(1e-15));
  auto r = regression_metrics(std::vector<double>{1, 0}, std::vector<double>{1, 1});
  CHECK(r.cosine == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(r.mse == 0.5);
  CHECK_THROWS_AS(regression_metrics(std::vector<double>{0, 0}, std::vector<double>{1, 1}), DataError);
  CHECK_THROWS_AS(regression_metrics(std::vector<double>{}, std::vector<double>{}), ContractError);
}

TEST_CASE("report JSON key order is fixed") {
  auto r = classification_metrics(std::vector<int>{1, 0}, std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0});
  Json j = to_json(r);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"task", "n", "accuracy", "precision", "recall", "f1", "auc", "macro", "counts"});
  Json rj = to_json(regression_metrics(std::vector<double>{1, 2}, std::vector<double>{1, 3}));
  CHECK(rj.dump().rfind(R"({"task":"score","n":2,"cosine":0.98994949366116)", 0) == 0);
  CHECK(rj["mse"] == 0.5);
}
