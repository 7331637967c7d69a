#include "rcnn/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rcnn/errors.hpp"
#include "rcnn/ops.hpp"

namespace rcnn {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

Tensor affine(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row_vector(g, matmul(g, x, w), b);
}

}  // namespace

Batch make_batch(std::span<const EncodedSequence> sequences) {
  if (sequences.empty()) throw ContractError("cannot build a batch from zero sequences");
  Batch batch;
  batch.size = sequences.size();
  const std::size_t padded = sequences.front().ids.size();
  for (const auto& s : sequences) {
    if (s.ids.size() != padded || s.attention_mask.size() != padded) {
      throw ContractError("sequences in a batch must share one padded length");
    }
    for (std::size_t t = 0; t < padded; ++t) {
      if (s.attention_mask[t] != (t < s.length)) {
        throw ContractError("attention mask must be true exactly on the first `length` positions");
      }
    }
    if (s.length == 0) throw ContractError("batch holds an empty sequence");
    batch.seq_len = std::max(batch.seq_len, s.length);
  }
  batch.ids.reserve(batch.size * batch.seq_len);
  batch.mask.reserve(batch.size * batch.seq_len);
  for (const auto& s : sequences) {
    batch.ids.insert(batch.ids.end(), s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(batch.seq_len));
    batch.mask.insert(batch.mask.end(), s.attention_mask.begin(),
                      s.attention_mask.begin() + static_cast<std::ptrdiff_t>(batch.seq_len));
    batch.lengths.push_back(s.length);
  }
  return batch;
}

EncoderParams EncoderParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.d_model, ff = config.d_ff;
  const double s = config.init_std;
  EncoderParams p;
  p.token_embedding = trainable(normal_tensor({config.vocab_size, d}, s, rng));
  p.position_embedding = trainable(normal_tensor({config.max_seq_len, d}, s, rng));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    EncoderLayerParams layer;
    layer.wq = trainable(normal_tensor({d, d}, s, rng));
    layer.bq = trainable(Tensor({d}));
    layer.wk = trainable(normal_tensor({d, d}, s, rng));
    layer.bk = trainable(Tensor({d}));
    layer.wv = trainable(normal_tensor({d, d}, s, rng));
    layer.bv = trainable(Tensor({d}));
    layer.wo = trainable(normal_tensor({d, d}, s, rng));
    layer.bo = trainable(Tensor({d}));
    layer.attention_norm_gain = trainable(Tensor({d}, 1.0));
    layer.attention_norm_bias = trainable(Tensor({d}));
    layer.ff_in = trainable(normal_tensor({d, ff}, s, rng));
    layer.ff_in_bias = trainable(Tensor({ff}));
    layer.ff_out = trainable(normal_tensor({ff, d}, s, rng));
    layer.ff_out_bias = trainable(Tensor({d}));
    layer.ff_norm_gain = trainable(Tensor({d}, 1.0));
    layer.ff_norm_bias = trainable(Tensor({d}));
    p.layers.push_back(std::move(layer));
  }
  p.mlm_bias = trainable(Tensor({config.vocab_size}));
  return p;
}

ParameterList EncoderParams::named() const {
  ParameterList out;
  out.push_back({"encoder.token_embedding.weight", token_embedding});
  out.push_back({"encoder.position_embedding.weight", position_embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "encoder.layers." + std::to_string(l) + ".";
    out.push_back({p + "attention.query.weight", L.wq});
    out.push_back({p + "attention.query.bias", L.bq});
    out.push_back({p + "attention.key.weight", L.wk});
    out.push_back({p + "attention.key.bias", L.bk});
    out.push_back({p + "attention.value.weight", L.wv});
    out.push_back({p + "attention.value.bias", L.bv});
    out.push_back({p + "attention.output.weight", L.wo});
    out.push_back({p + "attention.output.bias", L.bo});
    out.push_back({p + "attention_norm.gain", L.attention_norm_gain});
    out.push_back({p + "attention_norm.bias", L.attention_norm_bias});
    out.push_back({p + "ff.in.weight", L.ff_in});
    out.push_back({p + "ff.in.bias", L.ff_in_bias});
    out.push_back({p + "ff.out.weight", L.ff_out});
    out.push_back({p + "ff.out.bias", L.ff_out_bias});
    out.push_back({p + "ff_norm.gain", L.ff_norm_gain});
    out.push_back({p + "ff_norm.bias", L.ff_norm_bias});
  }
  out.push_back({"mlm.bias", mlm_bias});
  return out;
}

Tensor encoder_forward(Graph& g, const EncoderParams& params, const ModelConfig& config, const Batch& batch,
                       Rng* dropout_rng, EncoderTrace* trace) {
  if (batch.seq_len > config.max_seq_len) {
    throw ConfigError("sequence length " + std::to_string(batch.seq_len) + " exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  }
  if (batch.ids.size() != batch.size * batch.seq_len || batch.mask.size() != batch.ids.size()) {
    throw ContractError("batch ids and mask do not match its size x seq_len");
  }
  for (int id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config.vocab_size));
    }
  }
  const double p = config.dropout;
  std::vector<int> positions(batch.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % batch.seq_len);

  Tensor x = add(g, embedding(g, params.token_embedding, batch.ids),
                 embedding(g, params.position_embedding, positions));
  x = dropout(g, x, p, dropout_rng);

  for (const auto& L : params.layers) {
    Tensor q = affine(g, x, L.wq, L.bq);
    Tensor k = affine(g, x, L.wk, L.bk);
    Tensor v = affine(g, x, L.wv, L.bv);
    std::vector<double> probs;
    Tensor ctx = attention(g, q, k, v, batch.size, batch.seq_len, config.n_heads, batch.mask,
                           trace ? &probs : nullptr);
    Tensor attn = dropout(g, affine(g, ctx, L.wo, L.bo), p, dropout_rng);
    x = layer_norm(g, add(g, x, attn), L.attention_norm_gain, L.attention_norm_bias, config.layer_norm_eps);

    Tensor h = gelu(g, affine(g, x, L.ff_in, L.ff_in_bias));
    Tensor f = dropout(g, affine(g, h, L.ff_out, L.ff_out_bias), p, dropout_rng);
    x = layer_norm(g, add(g, x, f), L.ff_norm_gain, L.ff_norm_bias, config.layer_norm_eps);

    if (trace) {
      trace->layer_outputs.push_back(x);
      trace->attention.push_back(std::move(probs));
    }
  }
  return x;
}

Tensor encode_sequence(Graph& g, const EncoderParams& params, const ModelConfig& config, const Batch& batch,
                       Rng* dropout_rng, EncoderTrace* trace) {
  Tensor h = encoder_forward(g, params, config, batch, dropout_rng, trace);
  return reshape(g, h, {batch.size, batch.seq_len, config.d_model});
}

MaskingOutcome dynamic_mask(const EncodedSequence& sequence, std::size_t vocab_size, Rng& rng) {
  if (vocab_size <= static_cast<std::size_t>(Tokenizer::kNumSpecials)) {
    throw ConfigError("vocabulary of " + std::to_string(vocab_size) + " has no non-special tokens");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t t = 0; t < sequence.length && t < sequence.ids.size(); ++t) {
    if (!Tokenizer::is_special(sequence.ids[t])) candidates.push_back(t);
  }
  if (candidates.empty()) throw ContractError("sequence has no maskable position");

  const auto rounded = static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(sequence.length)));
  const std::size_t count = std::min(candidates.size(), std::max<std::size_t>(1, rounded));

  // Partial Fisher-Yates draws `count` distinct positions.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());

  MaskingOutcome out;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> random_token(Tokenizer::kNumSpecials, static_cast<int>(vocab_size) - 1);
  for (std::size_t pos : candidates) {
    const int original = sequence.ids[pos];
    const double u = coin(rng);
    out.positions.push_back(pos);
    out.original_ids.push_back(original);
    if (u < 0.8) {
      out.kinds.push_back(MaskReplacement::kMaskToken);
      out.replacement_ids.push_back(Tokenizer::kMask);
    } else if (u < 0.9) {
      out.kinds.push_back(MaskReplacement::kRandomToken);
      out.replacement_ids.push_back(random_token(rng));
    } else {
      out.kinds.push_back(MaskReplacement::kUnchanged);
      out.replacement_ids.push_back(original);
    }
  }
  return out;
}

EncodedSequence apply_mask(const EncodedSequence& sequence, const MaskingOutcome& outcome) {
  EncodedSequence masked = sequence;
  for (std::size_t i = 0; i < outcome.positions.size(); ++i) {
    masked.ids.at(outcome.positions[i]) = outcome.replacement_ids[i];
  }
  return masked;
}

MlmOutput mlm_forward(Graph& g, const EncoderParams& params, const ModelConfig& config, const Batch& batch,
                      std::span<const MaskingOutcome> outcomes, Rng* dropout_rng) {
  if (outcomes.size() != batch.size) {
    throw ContractError("mlm_forward: " + std::to_string(outcomes.size()) + " masking outcomes for a batch of " +
                        std::to_string(batch.size));
  }
  std::vector<std::size_t> rows;
  MlmOutput out;
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t i = 0; i < outcomes[b].positions.size(); ++i) {
      const std::size_t pos = outcomes[b].positions[i];
      if (pos >= batch.lengths[b]) throw ContractError("masked position lies in padding");
      rows.push_back(b * batch.seq_len + pos);
      out.targets.push_back(outcomes[b].original_ids[i]);
    }
  }
  if (rows.empty()) throw ContractError("mlm_forward: batch has no masked positions");

  Tensor hidden = encoder_forward(g, params, config, batch, dropout_rng);
  Tensor picked = select_rows(g, hidden, rows);
  out.logits = add_row_vector(g, matmul(g, picked, transpose(g, params.token_embedding)), params.mlm_bias);
  out.loss = cross_entropy(g, out.logits, out.targets);
  return out;
}

}  // namespace rcnn
