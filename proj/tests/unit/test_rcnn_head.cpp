#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fixtures.hpp"
#include "rcnn/errors.hpp"
#include "rcnn/grad_check.hpp"
#include "rcnn/model.hpp"
#include "rcnn/ops.hpp"
#include "rcnn/rcnn_head.hpp"
#include "rcnn/training.hpp"

using namespace rcnn;
using namespace rcnn::testing;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), Vec(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
  return m;
}

Vec to_vec(const Tensor& t) { return Vec(t.values().begin(), t.values().end()); }

Vec affine_ref(const Vec& x, const Tensor& w, const Tensor& b) {
  Vec y = to_vec(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[i] * w.at(i, j);
  return y;
}

double sigm(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vec layer_norm_ref(const Vec& x, const Tensor& gain, const Tensor& bias, double eps) {
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * (x[i] - mean) / std::sqrt(var + eps) + bias[i];
  return y;
}

Mat lstm_ref(const Mat& xs, const LstmParams& p, bool reverse) {
  const std::size_t u = p.recurrent_weight.dim(0), T = xs.size();
  Vec h(u, 0.0), c(u, 0.0);
  Mat out(T);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    Vec z = affine_ref(xs[t], p.input_weight, p.bias);
    for (std::size_t i = 0; i < u; ++i)
      for (std::size_t j = 0; j < 4 * u; ++j) z[j] += h[i] * p.recurrent_weight.at(i, j);
    for (std::size_t k = 0; k < u; ++k) {
      const double ig = sigm(z[k]), fg = sigm(z[u + k]), gg = std::tanh(z[2 * u + k]), og = sigm(z[3 * u + k]);
      c[k] = fg * c[k] + ig * gg;
      h[k] = og * std::tanh(c[k]);
    }
    out[t] = h;
  }
  return out;
}

// Whole forward pass for one unpadded sequence, written with plain loops.
Vec reference_forward(const RcnnRoberta& model, const std::vector<int>& ids) {
  const ModelConfig& c = model.config();
  const auto& e = model.encoder();
  const std::size_t T = ids.size(), d = c.d_model, H = c.n_heads, dk = d / H;
  Mat x(T, Vec(d));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < d; ++k) x[t][k] = e.token_embedding.at(ids[t], k) + e.position_embedding.at(t, k);
  for (const auto& L : e.layers) {
    Mat q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      q[t] = affine_ref(x[t], L.wq, L.bq);
      k[t] = affine_ref(x[t], L.wk, L.bk);
      v[t] = affine_ref(x[t], L.wv, L.bv);
    }
    Mat ctx(T, Vec(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        Vec s(T);
        double mx = -1e300, z = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          s[j] = 0.0;
          for (std::size_t a = 0; a < dk; ++a) s[j] += q[i][h * dk + a] * k[j][h * dk + a];
          s[j] /= std::sqrt(static_cast<double>(dk));
          mx = std::max(mx, s[j]);
        }
        for (std::size_t j = 0; j < T; ++j) z += (s[j] = std::exp(s[j] - mx));
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t a = 0; a < dk; ++a) ctx[i][h * dk + a] += s[j] / z * v[j][h * dk + a];
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      Vec a = affine_ref(ctx[t], L.wo, L.bo);
      for (std::size_t i = 0; i < d; ++i) a[i] += x[t][i];
      x[t] = layer_norm_ref(a, L.attention_norm_gain, L.attention_norm_bias, c.layer_norm_eps);
      Vec f = affine_ref(x[t], L.ff_in, L.ff_in_bias);
      for (double& y : f) y = 0.5 * y * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (y + 0.044715 * y * y * y)));
      Vec o = affine_ref(f, L.ff_out, L.ff_out_bias);
      for (std::size_t i = 0; i < d; ++i) o[i] += x[t][i];
      x[t] = layer_norm_ref(o, L.ff_norm_gain, L.ff_norm_bias, c.layer_norm_eps);
    }
  }
  const auto& hd = model.head();
  Mat fw = lstm_ref(x, hd.forward, false), bw = lstm_ref(x, hd.backward, true);
  Vec pooled(c.d_proj, -1e300);
  for (std::size_t t = 0; t < T; ++t) {
    Vec feat = x[t];
    feat.insert(feat.end(), fw[t].begin(), fw[t].end());
    feat.insert(feat.end(), bw[t].begin(), bw[t].end());
    Vec p = affine_ref(feat, hd.projection, hd.projection_bias);
    for (std::size_t j = 0; j < p.size(); ++j) pooled[j] = std::max(pooled[j], std::tanh(p[j]));
  }
  return affine_ref(pooled, hd.output, hd.output_bias);
}

void zero_all(const ParameterList& params) {
  for (auto p : params) {
    for (double& v : p.tensor.values()) v = 0.0;
  }
}

}  // namespace

TEST_CASE("head parameter shapes and forget bias") {
  ModelConfig c = ModelConfig::base();
  c.d_model = 768;
  Rng rng(1);
  RcnnParams p = RcnnParams::init(c, rng);
  CHECK(p.projection.dim(0) == 896);
  CHECK(p.projection.dim(1) == c.d_proj);
  CHECK(p.output.shape() == Shape{c.d_proj, 2});
  for (std::size_t j = 0; j < 4 * c.lstm_units; ++j) {
    const bool forget = j >= c.lstm_units && j < 2 * c.lstm_units;
    CHECK(p.forward.bias[j] == (forget ? 1.0 : 0.0));
    CHECK(p.backward.bias[j] == (forget ? 1.0 : 0.0));
  }
  CHECK(p.named().size() == 10);
}

TEST_CASE("zero weights and inputs give zero BiLSTM output") {
  ModelConfig c = tiny_config();
  Rng rng(2);
  RcnnParams p = RcnnParams::init(c, rng);
  zero_all(p.named());
  std::mt19937_64 r(3);
  Batch batch = random_batch({3, 5}, c.vocab_size, r);
  Graph g(false);
  Tensor out = bilstm_forward(g, Tensor({batch.size * batch.seq_len, c.d_model}), batch, p, c);
  CHECK(out.shape() == Shape{batch.size * batch.seq_len, 2 * c.lstm_units});
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("single step sequence runs both directions from the same step") {
  ModelConfig c = tiny_config();
  Rng rng(4);
  RcnnParams p = RcnnParams::init(c, rng);
  p.backward.input_weight = p.forward.input_weight;
  p.backward.recurrent_weight = p.forward.recurrent_weight;
  p.backward.bias = p.forward.bias;
  Batch batch;
  batch.size = 1;
  batch.seq_len = 1;
  batch.ids = {5};
  batch.mask = {true};
  batch.lengths = {1};
  std::mt19937_64 r(5);
  Tensor x({1, c.d_model});
  std::normal_distribution<double> n(0, 1);
  for (double& v : x.values()) v = n(r);
  Graph g(false);
  Tensor out = bilstm_forward(g, x, batch, p, c);
  REQUIRE(out.shape() == Shape{1, 2 * c.lstm_units});
  for (std::size_t k = 0; k < c.lstm_units; ++k) CHECK(out.at(0, k) == out.at(0, c.lstm_units + k));
}

TEST_CASE("two step scalar LSTM matches a hand-rolled recurrence") {
  ModelConfig c = tiny_config();
  c.d_model = 2;
  c.n_heads = 1;
  c.lstm_units = 1;
  Rng rng(6);
  RcnnParams p = RcnnParams::init(c, rng);
  // gates i, f, g, o
  const double wx[2][4] = {{0.5, -0.3, 0.8, 0.1}, {-0.2, 0.4, 0.6, -0.7}};
  const double wh[4] = {0.3, -0.5, 0.2, 0.9};
  const double b[4] = {0.1, 1.0, -0.1, 0.05};
  for (auto* dir : {&p.forward, &p.backward}) {
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) dir->input_weight.at(i, j) = wx[i][j];
    for (int j = 0; j < 4; ++j) {
      dir->recurrent_weight.at(0, j) = wh[j];
      dir->bias[j] = b[j];
    }
  }
  const double xs[2][2] = {{1.0, -2.0}, {0.5, 0.25}};
  Tensor x({2, 2}, {xs[0][0], xs[0][1], xs[1][0], xs[1][1]});
  Batch batch;
  batch.size = 1;
  batch.seq_len = 2;
  batch.ids = {0, 2};
  batch.mask = {true, true};
  batch.lengths = {2};
  Graph g(false);
  Tensor out = bilstm_forward(g, x, batch, p, c);

  auto step = [&](const double* xt, double& h, double& cs) {
    double z[4];
    for (int j = 0; j < 4; ++j) z[j] = xt[0] * wx[0][j] + xt[1] * wx[1][j] + h * wh[j] + b[j];
    const double i = 1 / (1 + std::exp(-z[0])), f = 1 / (1 + std::exp(-z[1])), gg = std::tanh(z[2]),
                 o = 1 / (1 + std::exp(-z[3]));
    cs = f * cs + i * gg;
    h = o * std::tanh(cs);
  };
  double h = 0, cs = 0;
  step(xs[0], h, cs);
  const double f0 = h;
  step(xs[1], h, cs);
  const double f1 = h;
  h = 0;
  cs = 0;
  step(xs[1], h, cs);
  const double b1 = h;
  step(xs[0], h, cs);
  const double b0 = h;
  CHECK(std::abs(out.at(0, 0) - f0) < 1e-10);
  CHECK(std::abs(out.at(1, 0) - f1) < 1e-10);
  CHECK(std::abs(out.at(0, 1) - b0) < 1e-10);
  CHECK(std::abs(out.at(1, 1) - b1) < 1e-10);
}

TEST_CASE("padded positions output zeros and padding changes nothing downstream") {
  ModelConfig c = tiny_config();
  Rng rng(7);
  RcnnRoberta model(c, rng);
  std::mt19937_64 r(8);
  for (int trial = 0; trial < 5; ++trial) {
    Batch batch = random_batch({3, 8, 5}, c.vocab_size, r);
    Batch noisy = scramble_padding(batch, c.vocab_size, r);
    Graph g(false);
    Tensor h1 = encoder_forward(g, model.encoder(), c, batch, nullptr);
    Tensor h2 = encoder_forward(g, model.encoder(), c, noisy, nullptr);
    Tensor l1 = bilstm_forward(g, h1, batch, model.head(), c);
    Tensor l2 = bilstm_forward(g, h2, noisy, model.head(), c);
    for (std::size_t row = 0; row < batch.mask.size(); ++row) {
      if (batch.mask[row]) continue;
      for (std::size_t k = 0; k < 2 * c.lstm_units; ++k) CHECK(l1.at(row, k) == 0.0);
    }
    CHECK(max_abs_diff_rows(l1, l2, batch.mask) < 1e-9);
    RcnnOutput o1 = rcnn_forward(g, h1, l1, batch, model.head());
    RcnnOutput o2 = rcnn_forward(g, h2, l2, noisy, model.head());
    for (std::size_t i = 0; i < o1.pooled.size(); ++i) CHECK(std::abs(o1.pooled[i] - o2.pooled[i]) < 1e-9);
    for (std::size_t i = 0; i < o1.output.size(); ++i) CHECK(std::abs(o1.output[i] - o2.output[i]) < 1e-9);
  }
}

TEST_CASE("non-prefix mask is rejected") {
  ModelConfig c = tiny_config();
  Rng rng(9);
  RcnnParams p = RcnnParams::init(c, rng);
  Batch batch;
  batch.size = 1;
  batch.seq_len = 3;
  batch.ids = {0, 1, 2};
  batch.mask = {true, false, true};
  batch.lengths = {2};
  Graph g(false);
  CHECK_THROWS_AS(bilstm_forward(g, Tensor({3, c.d_model}), batch, p, c), ContractError);
}

TEST_CASE("zero projection weights pool to tanh of the bias") {
  ModelConfig c = tiny_config();
  Rng rng(10);
  RcnnParams p = RcnnParams::init(c, rng);
  for (double& v : p.projection.values()) v = 0.0;
  for (std::size_t j = 0; j < c.d_proj; ++j) p.projection_bias[j] = 0.3 * static_cast<double>(j) - 1.0;
  std::mt19937_64 r(11);
  Batch batch = random_batch({4, 6}, c.vocab_size, r);
  Tensor hidden({batch.size * batch.seq_len, c.d_model});
  std::normal_distribution<double> n(0, 1);
  for (double& v : hidden.values()) v = n(r);
  Graph g(false);
  Tensor lstm = bilstm_forward(g, hidden, batch, p, c);
  RcnnOutput out = rcnn_forward(g, hidden, lstm, batch, p);
  for (std::size_t b = 0; b < batch.size; ++b)
    for (std::size_t j = 0; j < c.d_proj; ++j) CHECK(out.pooled.at(b, j) == std::tanh(p.projection_bias[j]));
}

TEST_CASE("duplicating a time step leaves the pooled vector unchanged") {
  ModelConfig c = tiny_config();
  Rng rng(12);
  RcnnParams p = RcnnParams::init(c, rng);
  std::mt19937_64 r(13);
  std::normal_distribution<double> n(0, 1);
  const std::size_t T = 5, w = c.d_model + 2 * c.lstm_units;
  Tensor feats({T, w});
  for (double& v : feats.values()) v = n(r);
  Tensor dup({T + 1, w});
  for (std::size_t t = 0; t <= T; ++t) {
    const std::size_t src = t <= 2 ? t : t - 1;  // row 2 appears twice
    for (std::size_t k = 0; k < w; ++k) dup.at(t, k) = feats.at(src, k);
  }
  auto run = [&](const Tensor& f, std::size_t steps) {
    Batch batch;
    batch.size = 1;
    batch.seq_len = steps;
    batch.ids.assign(steps, 5);
    batch.mask.assign(steps, true);
    batch.lengths = {steps};
    Graph g(false);
    Tensor h = slice_cols(g, f, 0, c.d_model);
    Tensor l = slice_cols(g, f, c.d_model, 2 * c.lstm_units);
    return rcnn_forward(g, h, l, batch, p).pooled;
  };
  Tensor a = run(feats, T), b = run(dup, T + 1);
  for (std::size_t j = 0; j < c.d_proj; ++j) CHECK(a[j] == b[j]);
}

TEST_CASE("all-masked sequence cannot be pooled") {
  ModelConfig c = tiny_config();
  Rng rng(14);
  RcnnParams p = RcnnParams::init(c, rng);
  Batch batch;
  batch.size = 1;
  batch.seq_len = 2;
  batch.ids = {1, 1};
  batch.mask = {false, false};
  batch.lengths = {0};
  Graph g(false);
  CHECK_THROWS_AS(rcnn_forward(g, Tensor({2, c.d_model}), Tensor({2, 2 * c.lstm_units}), batch, p), ContractError);
}

TEST_CASE("toy model logits match the straight-line reference") {
  for (TaskHead task : {TaskHead::kBinary, TaskHead::kRegression}) {
    ModelConfig c = ModelConfig::toy();
    c.task = task;
    c.init_std = 0.1;
    Rng rng(15);
    RcnnRoberta model(c, rng);
    std::mt19937_64 r(16);
    std::vector<EncodedSequence> seqs = {random_sequence(6, 12, c.vocab_size, r),
                                         random_sequence(12, 12, c.vocab_size, r),
                                         random_sequence(3, 12, c.vocab_size, r)};
    Batch batch = make_batch(seqs);
    Graph g(false);
    RcnnOutput out = model.forward(g, batch);
    REQUIRE(out.output.shape() == Shape{3, c.n_outputs()});
    for (std::size_t b = 0; b < seqs.size(); ++b) {
      std::vector<int> ids(seqs[b].ids.begin(), seqs[b].ids.begin() + static_cast<long>(seqs[b].length));
      Vec ref = reference_forward(model, ids);
      for (std::size_t k = 0; k < c.n_outputs(); ++k) CHECK(std::abs(out.output.at(b, k) - ref[k]) < 1e-10);
    }
  }
}

TEST_CASE("full stack passes finite differences, encoder frozen and trainable") {
  ModelConfig c = tiny_config();
  c.init_std = 0.2;
  for (bool frozen : {false, true}) {
    for (TaskHead task : {TaskHead::kBinary, TaskHead::kRegression}) {
      c.task = task;
      Rng rng(17);
      RcnnRoberta model(c, rng);
      std::mt19937_64 r(18);
      Batch batch = random_batch({4, 7, 3}, c.vocab_size, r);
      const std::vector<double> targets = task == TaskHead::kBinary ? std::vector<double>{1, 0, 1}
                                                                    : std::vector<double>{-2, 3, 0};
      ParameterList params = frozen ? model.head().named() : model.parameters();
      if (frozen) {
        for (auto& n : model.encoder().named()) n.tensor.set_requires_grad(false);
      }
      auto loss = [&](Graph& g) { return model.loss(g, batch, targets); };
      GradCheckOptions opts;
      opts.max_coords_per_tensor = 24;
      auto result = grad_check(loss, params, opts);
      INFO("frozen " << frozen << " task " << to_string(task) << " worst " << result.max_relative_error);
      CHECK(result.max_relative_error < 1e-4);
      if (frozen) {
        for (auto& n : model.encoder().named()) CHECK(!n.tensor.has_grad());
      }
    }
  }
}

TEST_CASE("adding a constant to both logits keeps the argmax") {
  std::mt19937_64 r(19);
  std::normal_distribution<double> n(0, 3);
  Graph g(false);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor logits({1, 2}, {n(r), n(r)});
    const double shift = n(r) * 10;
    Tensor shifted({1, 2}, {logits[0] + shift, logits[1] + shift});
    Tensor p1 = softmax(g, logits, 1), p2 = softmax(g, shifted, 1);
    CHECK((p1[1] > p1[0]) == (p2[1] > p2[0]));
    CHECK(std::abs(p1[0] - p2[0]) < 1e-12);
  }
}

TEST_CASE("recurrence separates sequences that max pooling alone cannot") {
  ModelConfig c = tiny_config();
  c.d_model = 4;
  c.n_heads = 1;
  c.lstm_units = 6;
  c.d_proj = 8;
  Rng rng(20);
  RcnnParams p = RcnnParams::init(c, rng);

  // Class 1 is [u, v, w], class 0 the same rows reversed: identical bags.
  const double rows[3][4] = {{1, 0, 0, 0.5}, {0, 1, 0, -0.5}, {0, 0, 1, 0.25}};
  Tensor x({12, 4});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 4; ++k) {
      x.at(t, k) = rows[t][k];
      x.at(3 + t, k) = rows[2 - t][k];
      x.at(6 + t, k) = rows[t][k];
      x.at(9 + t, k) = rows[2 - t][k];
    }
  Batch batch;
  batch.size = 4;
  batch.seq_len = 3;
  batch.ids.assign(12, 5);
  batch.mask.assign(12, true);
  batch.lengths = {3, 3, 3, 3};
  const std::vector<int> labels = {1, 0, 1, 0};

  // Without recurrent features the pooled vectors coincide.
  {
    Rng other(21);
    RcnnParams bag = RcnnParams::init(c, other);
    for (auto* dir : {&bag.forward, &bag.backward}) {
      for (double& v : dir->input_weight.values()) v = 0.0;
      for (double& v : dir->recurrent_weight.values()) v = 0.0;
    }
    Graph g(false);
    RcnnOutput out = rcnn_forward(g, x, bilstm_forward(g, x, batch, bag, c), batch, bag);
    for (std::size_t j = 0; j < c.d_proj; ++j) CHECK(out.pooled.at(0, j) == out.pooled.at(1, j));
  }
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.weight_decay = 0.0;
  Adam opt(p.named(), tc);
  for (int step = 0; step < 300; ++step) {
    Graph g;
    Tensor lstm = bilstm_forward(g, x, batch, p, c);
    Tensor loss = cross_entropy(g, rcnn_forward(g, x, lstm, batch, p).output, labels);
    opt.zero_grad();
    g.backward(loss);
    opt.step();
  }
  Graph g(false);
  RcnnOutput out = rcnn_forward(g, x, bilstm_forward(g, x, batch, p, c), batch, p);
  for (std::size_t b = 0; b < 4; ++b) CHECK((out.output.at(b, 1) > out.output.at(b, 0) ? 1 : 0) == labels[b]);
}
