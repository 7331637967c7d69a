#include "rcnn/grad_suite.hpp"

#include <chrono>
#include <functional>

#include "rcnn/grad_check.hpp"
#include "rcnn/model.hpp"
#include "rcnn/ops.hpp"
#include "rcnn/random.hpp"

namespace rcnn {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Fixed random weighting of y's coordinates, summed.
Tensor probe(Graph& g, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(g, mul(g, y, random_tensor(y.shape(), rng)));
}

struct Case {
  std::string name;
  LossBuilder loss;
  ParameterList inputs;
};

std::vector<Case> primitive_cases(std::uint64_t seed) {
  Rng rng = make_stream(seed, "gradcheck");
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({3, 4}, rng);
  Tensor row = random_tensor({4}, rng);
  Tensor gain = random_tensor({4}, rng), bias = random_tensor({4}, rng);
  Tensor table = random_tensor({6, 4}, rng);
  Tensor logits = random_tensor({5, 3}, rng, 2.0);
  Tensor pred = random_tensor({7}, rng), gold = random_tensor({7}, rng);
  Tensor q = random_tensor({8, 8}, rng), k = random_tensor({8, 8}, rng), v = random_tensor({8, 8}, rng);
  const std::uint64_t ps = seed;
  const std::vector<int> ids{0, 3, 3, 5, 1};
  const std::vector<std::size_t> rows{2, 0, 2};
  const std::vector<int> targets{0, 2, 1, 1, 0};
  const std::vector<bool> key_mask{true, true, true, true, true, true, false, false};

  return {
      {"matmul", [=](Graph& g) { return probe(g, matmul(g, a, b), ps); }, {{"a", a}, {"b", b}}},
      {"transpose", [=](Graph& g) { return probe(g, transpose(g, a), ps); }, {{"a", a}}},
      {"add", [=](Graph& g) { return probe(g, add(g, a, c), ps); }, {{"a", a}, {"c", c}}},
      {"sub", [=](Graph& g) { return probe(g, sub(g, a, c), ps); }, {{"a", a}, {"c", c}}},
      {"mul", [=](Graph& g) { return probe(g, mul(g, a, c), ps); }, {{"a", a}, {"c", c}}},
      {"scale", [=](Graph& g) { return probe(g, scale(g, a, -1.7), ps); }, {{"a", a}}},
      {"add_row_vector", [=](Graph& g) { return probe(g, add_row_vector(g, a, row), ps); },
       {{"a", a}, {"row", row}}},
      {"tanh", [=](Graph& g) { return probe(g, tanh(g, a), ps); }, {{"a", a}}},
      {"sigmoid", [=](Graph& g) { return probe(g, sigmoid(g, a), ps); }, {{"a", a}}},
      {"gelu", [=](Graph& g) { return probe(g, gelu(g, a), ps); }, {{"a", a}}},
      {"softmax", [=](Graph& g) { return add(g, probe(g, softmax(g, a, 0), ps), probe(g, softmax(g, a, 1), ps)); },
       {{"a", a}}},
      {"layer_norm", [=](Graph& g) { return probe(g, layer_norm(g, a, gain, bias, 1e-5), ps); },
       {{"a", a}, {"gain", gain}, {"bias", bias}}},
      {"embedding", [=](Graph& g) { return probe(g, embedding(g, table, ids), ps); }, {{"table", table}}},
      {"slice_rows", [=](Graph& g) { return probe(g, slice_rows(g, a, 1, 2), ps); }, {{"a", a}}},
      {"slice_cols", [=](Graph& g) { return probe(g, slice_cols(g, a, 1, 2), ps); }, {{"a", a}}},
      {"concat_rows",
       [=](Graph& g) {
         std::vector<Tensor> parts{a, c, a};
         return probe(g, concat_rows(g, parts), ps);
       },
       {{"a", a}, {"c", c}}},
      {"concat_cols",
       [=](Graph& g) {
         std::vector<Tensor> parts{c, a};
         return probe(g, concat_cols(g, parts), ps);
       },
       {{"a", a}, {"c", c}}},
      {"select_rows", [=](Graph& g) { return probe(g, select_rows(g, a, rows), ps); }, {{"a", a}}},
      {"blend_rows", [=](Graph& g) { return probe(g, blend_rows(g, {true, false, true}, a, c), ps); },
       {{"a", a}, {"c", c}}},
      {"reshape", [=](Graph& g) { return probe(g, reshape(g, a, {2, 6}), ps); }, {{"a", a}}},
      {"max_over_time", [=](Graph& g) { return probe(g, max_over_time(g, a, {true, false, true}), ps); },
       {{"a", a}}},
      {"dropout",
       [=](Graph& g) {
         Rng mask_rng(ps);
         return probe(g, dropout(g, a, 0.3, &mask_rng), ps);
       },
       {{"a", a}}},
      {"cross_entropy", [=](Graph& g) { return cross_entropy(g, logits, targets); }, {{"logits", logits}}},
      {"mse_loss", [=](Graph& g) { return mse_loss(g, pred, gold); }, {{"pred", pred}, {"gold", gold}}},
      {"attention", [=](Graph& g) { return probe(g, attention(g, q, k, v, 2, 4, 2, key_mask), ps); },
       {{"q", q}, {"k", k}, {"v", v}}},
  };
}

EncodedSequence random_sequence(std::size_t length, std::size_t padded, std::size_t vocab, Rng& rng) {
  std::uniform_int_distribution<int> tok(4, static_cast<int>(vocab) - 1);
  EncodedSequence s;
  s.length = length;
  s.ids.assign(padded, 1);
  s.attention_mask.assign(padded, false);
  for (std::size_t t = 0; t < length; ++t) {
    s.ids[t] = t == 0 ? 0 : t + 1 == length ? 2 : tok(rng);
    s.attention_mask[t] = true;
  }
  return s;
}

GradSuiteEntry stack_entry(const GradSuiteOptions& options, TaskHead task, std::uint64_t seed) {
  ModelConfig c = options.stack_config;
  c.task = task;
  c.dropout = 0.0;
  c.lstm_dropout = 0.0;
  c.init_std = options.stack_init_std;
  Rng init = make_stream(seed, "init");
  RcnnRoberta model(c, init);
  Rng data = make_stream(seed, "gradcheck");
  const std::size_t padded = std::min<std::size_t>(c.max_seq_len, 9);
  std::vector<EncodedSequence> seqs{random_sequence(std::min<std::size_t>(padded, 4), padded, c.vocab_size, data),
                                    random_sequence(padded, padded, c.vocab_size, data),
                                    random_sequence(std::min<std::size_t>(padded, 3), padded, c.vocab_size, data)};
  Batch batch = make_batch(seqs);
  const std::vector<double> targets =
      task == TaskHead::kBinary ? std::vector<double>{1, 0, 1} : std::vector<double>{-2, 3, 0};
  GradCheckOptions gc;
  gc.max_coords_per_tensor = options.stack_coords_per_tensor;
  gc.seed = seed;
  auto r = grad_check([&](Graph& g) { return model.loss(g, batch, targets); }, model.parameters(), gc);
  GradSuiteEntry e{"stack/" + to_string(task), seed, r.max_relative_error, {}};
  for (const auto& t : r.tensors) {
    if (t.relative_error == r.max_relative_error) e.worst_tensor = t.name;
  }
  return e;
}

}  // namespace

const GradSuiteEntry* GradSuiteReport::worst() const {
  const GradSuiteEntry* w = nullptr;
  for (const auto& e : entries) {
    if (w == nullptr || e.relative_error > w->relative_error) w = &e;
  }
  return w;
}

Json GradSuiteReport::to_json() const {
  Json j;
  j["max_relative_error"] = max_relative_error;
  j["checks"] = entries.size();
  if (const auto* w = worst()) {
    j["worst"] = {{"name", w->name}, {"seed", w->seed}, {"tensor", w->worst_tensor}};
  }
  j["seconds"] = seconds;
  return j;
}

GradSuiteReport run_grad_suite(const GradSuiteOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteReport report;
  for (std::size_t i = 0; i < options.seeds; ++i) {
    const std::uint64_t seed = options.first_seed + i;
    if (options.primitives) {
      for (const auto& tc : primitive_cases(seed)) {
        auto r = grad_check(tc.loss, tc.inputs);
        GradSuiteEntry e{tc.name, seed, r.max_relative_error, {}};
        for (const auto& t : r.tensors) {
          if (t.relative_error == r.max_relative_error) e.worst_tensor = t.name;
        }
        report.entries.push_back(std::move(e));
      }
    }
    if (options.stack) {
      report.entries.push_back(stack_entry(options, TaskHead::kBinary, seed));
      report.entries.push_back(stack_entry(options, TaskHead::kRegression, seed));
    }
  }
  for (const auto& e : report.entries) report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace rcnn
