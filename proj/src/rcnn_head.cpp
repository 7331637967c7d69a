#include "rcnn/rcnn_head.hpp"

#include <string>

#include "rcnn/errors.hpp"
#include "rcnn/ops.hpp"

namespace rcnn {

namespace {

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

Tensor zero_param(Shape shape) {
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

LstmParams init_lstm(std::size_t d_in, std::size_t units, double stddev, Rng& rng) {
  LstmParams p;
  p.input_weight = normal_param({d_in, 4 * units}, stddev, rng);
  p.recurrent_weight = normal_param({units, 4 * units}, stddev, rng);
  p.bias = zero_param({4 * units});
  for (std::size_t j = units; j < 2 * units; ++j) p.bias[j] = 1.0;
  return p;
}

void name_lstm(ParameterList& out, const std::string& prefix, const LstmParams& p) {
  out.push_back({prefix + "input.weight", p.input_weight});
  out.push_back({prefix + "recurrent.weight", p.recurrent_weight});
  out.push_back({prefix + "bias", p.bias});
}

// Hidden states of one direction, rows ordered b·T + t.
Tensor run_direction(Graph& g, const Tensor& x, const Batch& batch, const LstmParams& p, bool reverse) {
  const std::size_t B = batch.size, T = batch.seq_len;
  const std::size_t units = p.recurrent_weight.dim(0);
  Tensor gates_in = add_row_vector(g, matmul(g, x, p.input_weight), p.bias);
  Tensor zeros({B, units});
  Tensor h = zeros, c = zeros;
  std::vector<Tensor> outputs(T);
  std::vector<std::size_t> rows(B);
  std::vector<bool> step_mask(B);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    for (std::size_t b = 0; b < B; ++b) {
      rows[b] = b * T + t;
      step_mask[b] = batch.mask[b * T + t];
    }
    Tensor gates = add(g, select_rows(g, gates_in, rows), matmul(g, h, p.recurrent_weight));
    Tensor i = sigmoid(g, slice_cols(g, gates, 0, units));
    Tensor f = sigmoid(g, slice_cols(g, gates, units, units));
    Tensor cell = tanh(g, slice_cols(g, gates, 2 * units, units));
    Tensor o = sigmoid(g, slice_cols(g, gates, 3 * units, units));
    Tensor c_new = add(g, mul(g, f, c), mul(g, i, cell));
    Tensor h_new = mul(g, o, tanh(g, c_new));
    c = blend_rows(g, step_mask, c_new, c);
    h = blend_rows(g, step_mask, h_new, h);
    outputs[t] = blend_rows(g, step_mask, h_new, zeros);
  }
  // concat_rows stacks time-major (t·B + b); reorder to b·T + t.
  Tensor stacked = concat_rows(g, outputs);
  std::vector<std::size_t> order(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) order[b * T + t] = t * B + b;
  }
  return select_rows(g, stacked, order);
}

}  // namespace

RcnnParams RcnnParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const double s = config.init_std;
  RcnnParams p;
  p.forward = init_lstm(config.d_model, config.lstm_units, s, rng);
  p.backward = init_lstm(config.d_model, config.lstm_units, s, rng);
  p.projection = normal_param({config.d_model + 2 * config.lstm_units, config.d_proj}, s, rng);
  p.projection_bias = zero_param({config.d_proj});
  p.output = normal_param({config.d_proj, config.n_outputs()}, s, rng);
  p.output_bias = zero_param({config.n_outputs()});
  return p;
}

ParameterList RcnnParams::named() const {
  ParameterList out;
  name_lstm(out, "head.lstm.forward.", forward);
  name_lstm(out, "head.lstm.backward.", backward);
  out.push_back({"head.projection.weight", projection});
  out.push_back({"head.projection.bias", projection_bias});
  out.push_back({"head.output.weight", output});
  out.push_back({"head.output.bias", output_bias});
  return out;
}

Tensor bilstm_forward(Graph& g, const Tensor& hidden, const Batch& batch, const RcnnParams& params,
                      const ModelConfig& config, Rng* dropout_rng) {
  Tensor x = hidden;
  if (hidden.rank() == 3) x = reshape(g, hidden, {hidden.dim(0) * hidden.dim(1), hidden.dim(2)});
  if (x.rank() != 2 || x.dim(0) != batch.size * batch.seq_len) {
    throw DimensionError("bilstm_forward: hidden " + shape_string(hidden.shape()) + " does not match a batch of " +
                         std::to_string(batch.size) + "x" + std::to_string(batch.seq_len));
  }
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 1; t < batch.seq_len; ++t) {
      if (batch.mask[b * batch.seq_len + t] && !batch.mask[b * batch.seq_len + t - 1]) {
        throw ContractError("bilstm_forward: mask of sequence " + std::to_string(b) + " is not a prefix");
      }
    }
  }
  x = dropout(g, x, config.lstm_dropout, dropout_rng);
  Tensor fwd = run_direction(g, x, batch, params.forward, false);
  Tensor bwd = run_direction(g, x, batch, params.backward, true);
  const Tensor both[] = {fwd, bwd};
  return dropout(g, concat_cols(g, both), config.lstm_dropout, dropout_rng);
}

RcnnOutput rcnn_forward(Graph& g, const Tensor& hidden, const Tensor& lstm_out, const Batch& batch,
                        const RcnnParams& params) {
  Tensor h = hidden.rank() == 3 ? reshape(g, hidden, {hidden.dim(0) * hidden.dim(1), hidden.dim(2)}) : hidden;
  const std::size_t B = batch.size, T = batch.seq_len;
  if (h.dim(0) != B * T || lstm_out.dim(0) != B * T) {
    throw DimensionError("rcnn_forward: " + shape_string(h.shape()) + " and " + shape_string(lstm_out.shape()) +
                         " do not match a batch of " + std::to_string(B) + "x" + std::to_string(T));
  }
  const Tensor parts[] = {h, lstm_out};
  Tensor features = concat_cols(g, parts);
  Tensor projected = tanh(g, add_row_vector(g, matmul(g, features, params.projection), params.projection_bias));
  const std::size_t d_proj = params.projection.dim(1);
  std::vector<Tensor> pooled_rows;
  pooled_rows.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    Tensor pooled = max_over_time(g, slice_rows(g, projected, b * T, T), batch.row_mask(b));
    pooled_rows.push_back(reshape(g, pooled, {1, d_proj}));
  }
  RcnnOutput out;
  out.pooled = concat_rows(g, pooled_rows);
  out.output = add_row_vector(g, matmul(g, out.pooled, params.output), params.output_bias);
  return out;
}

}  // namespace rcnn
