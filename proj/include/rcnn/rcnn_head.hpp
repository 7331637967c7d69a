#pragma once

#include "rcnn/config.hpp"
#include "rcnn/encoder.hpp"
#include "rcnn/random.hpp"
#include "rcnn/tensor.hpp"

namespace rcnn {

// One LSTM direction. Gate blocks are laid out [input | forget | cell | output]
// along the 4·units axis.
struct LstmParams {
  Tensor input_weight;      // [d_in × 4·units]
  Tensor recurrent_weight;  // [units × 4·units]
  Tensor bias;              // [4·units], forget block starts at 1.0
};

struct RcnnParams {
  LstmParams forward;
  LstmParams backward;
  Tensor projection;       // [(d_model + 2·lstm_units) × d_proj]
  Tensor projection_bias;  // [d_proj]
  Tensor output;           // [d_proj × n_outputs]
  Tensor output_bias;      // [n_outputs]

  static RcnnParams init(const ModelConfig& config, Rng& rng);
  // Names are prefixed "head.".
  ParameterList named() const;
};

// Runs the LSTM left-to-right and right-to-left over each sequence's unmasked
// positions and concatenates the two states per position. `hidden` is
// [B·T × d_model] or [B × T × d_model]; the result is [B·T × 2·lstm_units]
// with zero rows at padded positions. Dropout on inputs and outputs is active
// only when dropout_rng is non-null.
Tensor bilstm_forward(Graph& graph, const Tensor& hidden, const Batch& batch, const RcnnParams& params,
                      const ModelConfig& config, Rng* dropout_rng = nullptr);

struct RcnnOutput {
  Tensor pooled;  // [B × d_proj]
  Tensor output;  // [B × 2] logits, or [B × 1] scores
};

// tanh(W_p·[hidden; lstm_out] + b_p) per position, max over unmasked
// positions, then the output layer.
RcnnOutput rcnn_forward(Graph& graph, const Tensor& hidden, const Tensor& lstm_out, const Batch& batch,
                        const RcnnParams& params);

}  // namespace rcnn
