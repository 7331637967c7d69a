#pragma once

#include <random>
#include <string>
#include <vector>

#include "rcnn/config.hpp"
#include "rcnn/data.hpp"
#include "rcnn/encoder.hpp"
#include "rcnn/ops.hpp"
#include "rcnn/tokenizer.hpp"

namespace rcnn::testing {

// cls, length-2 random non-special ids, sep, then pad up to `padded`.
inline EncodedSequence random_sequence(std::size_t length, std::size_t padded, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tok(Tokenizer::kNumSpecials, static_cast<int>(vocab) - 1);
  EncodedSequence s;
  s.length = length;
  s.ids.assign(padded, Tokenizer::kPad);
  s.attention_mask.assign(padded, false);
  for (std::size_t t = 0; t < length; ++t) {
    s.ids[t] = t == 0 ? Tokenizer::kCls : t + 1 == length ? Tokenizer::kSep : tok(rng);
    s.attention_mask[t] = true;
  }
  return s;
}

inline Batch random_batch(const std::vector<std::size_t>& lengths, std::size_t vocab, std::mt19937_64& rng) {
  std::size_t padded = 0;
  for (auto l : lengths) padded = std::max(padded, l);
  std::vector<EncodedSequence> seqs;
  for (auto l : lengths) seqs.push_back(random_sequence(l, padded + 2, vocab, rng));
  return make_batch(seqs);
}

// Replaces every padded id with a random one (specials included).
inline Batch scramble_padding(Batch batch, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tok(0, static_cast<int>(vocab) - 1);
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    if (!batch.mask[i]) batch.ids[i] = tok(rng);
  }
  return batch;
}

// Small model used where speed matters more than size.
inline ModelConfig tiny_config(TaskHead task = TaskHead::kBinary) {
  ModelConfig c = ModelConfig::toy();
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 40;
  c.max_seq_len = 16;
  c.lstm_units = 4;
  c.d_proj = 8;
  c.dropout = 0.0;
  c.lstm_dropout = 0.0;
  c.task = task;
  return c;
}

// Fixed random weighting of every coordinate, summed to a scalar.
inline Tensor probe(Graph& g, const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor w(y.shape());
  for (auto& v : w.values()) v = dist(rng);
  return sum(g, mul(g, y, w));
}

inline double max_abs_diff_rows(const Tensor& a, const Tensor& b, const std::vector<bool>& rows) {
  const std::size_t width = a.size() / rows.size();
  double worst = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r]) continue;
    for (std::size_t c = 0; c < width; ++c) {
      worst = std::max(worst, std::abs(a[r * width + c] - b[r * width + c]));
    }
  }
  return worst;
}

#ifdef RCNN_TEST_DATA
inline std::string data_path(const std::string& name) { return std::string(RCNN_TEST_DATA) + "/" + name; }

// BPE trained on the bundled toy corpus.
inline Tokenizer toy_tokenizer(std::size_t vocab_size = 300) {
  const auto corpus = load_corpus(data_path("toy_corpus.txt"));
  return Tokenizer::train(corpus, vocab_size);
}
#endif

}  // namespace rcnn::testing
