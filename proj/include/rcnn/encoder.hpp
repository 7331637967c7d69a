#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rcnn/config.hpp"
#include "rcnn/random.hpp"
#include "rcnn/tensor.hpp"
#include "rcnn/tokenizer.hpp"

namespace rcnn {

// Sequences packed into one row-major block of size·seq_len positions, trimmed
// to the longest unpadded sequence.
struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<bool> mask;
  std::vector<std::size_t> lengths;

  std::vector<bool> row_mask(std::size_t b) const {
    return {mask.begin() + static_cast<std::ptrdiff_t>(b * seq_len),
            mask.begin() + static_cast<std::ptrdiff_t>((b + 1) * seq_len)};
  }
};

// Throws ContractError on an empty list or a non prefix-shaped mask.
Batch make_batch(std::span<const EncodedSequence> sequences);

struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor attention_norm_gain, attention_norm_bias;
  Tensor ff_in, ff_in_bias, ff_out, ff_out_bias;
  Tensor ff_norm_gain, ff_norm_bias;
};

struct EncoderParams {
  Tensor token_embedding;     // [vocab × d_model], also the tied MLM output projection
  Tensor position_embedding;  // [max_seq_len × d_model]
  std::vector<EncoderLayerParams> layers;
  Tensor mlm_bias;            // [vocab]

  // Weights ~ N(0, init_std), biases 0, layer-norm gains 1.
  static EncoderParams init(const ModelConfig& config, Rng& rng);
  // Names are prefixed "encoder." and "mlm.".
  ParameterList named() const;
};

// Optional observation points for tests and diagnostics.
struct EncoderTrace {
  std::vector<Tensor> layer_outputs;               // each [B·T × d_model]
  std::vector<std::vector<double>> attention;      // per layer, [B][head][query][key]
};

// Token + position embeddings followed by n_layers post-norm blocks
// (self-attention with padded keys excluded, residual, layer norm, GELU
// feed-forward, residual, layer norm). Returns hidden states [B·T × d_model].
// Dropout is active only when dropout_rng is non-null.
Tensor encoder_forward(Graph& graph, const EncoderParams& params, const ModelConfig& config, const Batch& batch,
                       Rng* dropout_rng, EncoderTrace* trace = nullptr);

// Same computation shaped [B × T × d_model].
Tensor encode_sequence(Graph& graph, const EncoderParams& params, const ModelConfig& config, const Batch& batch,
                       Rng* dropout_rng = nullptr, EncoderTrace* trace = nullptr);

enum class MaskReplacement { kMaskToken, kRandomToken, kUnchanged };

struct MaskingOutcome {
  std::vector<std::size_t> positions;  // ascending
  std::vector<int> original_ids;
  std::vector<int> replacement_ids;
  std::vector<MaskReplacement> kinds;
};

// Selects max(1, round(0.15·length)) content positions (never cls/sep/pad);
// each becomes <mask> with p 0.8, a random non-special token with p 0.1, or
// stays unchanged. Throws ContractError when no position is maskable.
MaskingOutcome dynamic_mask(const EncodedSequence& sequence, std::size_t vocab_size, Rng& rng);

EncodedSequence apply_mask(const EncodedSequence& sequence, const MaskingOutcome& outcome);

struct MlmOutput {
  Tensor logits;  // [n_masked × vocab]
  Tensor loss;
  std::vector<int> targets;
};

// Predicts the original ids at masked positions through the tied embedding
// projection plus mlm_bias. `batch` holds the masked ids and outcomes[b]
// belongs to row b.
MlmOutput mlm_forward(Graph& graph, const EncoderParams& params, const ModelConfig& config, const Batch& batch,
                      std::span<const MaskingOutcome> outcomes, Rng* dropout_rng);

}  // namespace rcnn
