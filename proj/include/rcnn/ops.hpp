#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rcnn/random.hpp"
#include "rcnn/tensor.hpp"

namespace rcnn {

// Differentiable primitives. Every op computes its output eagerly and, when
// `graph` is recording and an input tracks gradients, records a backward
// closure. Matrices are 2-D row-major tensors.

Tensor matmul(Graph& graph, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& graph, const Tensor& a);

// Elementwise, operands of identical shape.
Tensor add(Graph& graph, const Tensor& a, const Tensor& b);
Tensor sub(Graph& graph, const Tensor& a, const Tensor& b);
Tensor mul(Graph& graph, const Tensor& a, const Tensor& b);
Tensor scale(Graph& graph, const Tensor& a, double factor);

// x[m×n] + bias[n] broadcast over rows.
Tensor add_row_vector(Graph& graph, const Tensor& x, const Tensor& bias);

Tensor tanh(Graph& graph, const Tensor& x);
Tensor sigmoid(Graph& graph, const Tensor& x);

// 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
Tensor gelu(Graph& graph, const Tensor& x);

// Max-subtracted softmax along `axis`.
Tensor softmax(Graph& graph, const Tensor& x, std::size_t axis);

// Normalizes over the last dimension with biased variance, then gain·x̂ + bias.
Tensor layer_norm(Graph& graph, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Rows of table[V×d] picked by ids -> [n×d].
Tensor embedding(Graph& graph, const Tensor& table, std::span<const int> ids);

Tensor slice_rows(Graph& graph, const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(Graph& graph, const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(Graph& graph, std::span<const Tensor> parts);
Tensor concat_cols(Graph& graph, std::span<const Tensor> parts);
Tensor select_rows(Graph& graph, const Tensor& x, std::span<const std::size_t> rows);
Tensor reshape(Graph& graph, const Tensor& x, Shape shape);

// Row r of the result is row r of `a` where row_mask[r] is true, else of `b`.
Tensor blend_rows(Graph& graph, const std::vector<bool>& row_mask, const Tensor& a, const Tensor& b);

// Per-feature maximum of x[T×d] over rows whose mask entry is true -> [d].
// Gradient goes to the first maximal row on ties.
Tensor max_over_time(Graph& graph, const Tensor& x, const std::vector<bool>& mask);

// Inverted dropout. Identity when rng is null or p == 0.
Tensor dropout(Graph& graph, const Tensor& x, double p, Rng* rng);

Tensor sum(Graph& graph, const Tensor& x);

// Mean negative log-softmax of the target class over rows of logits[B×C].
Tensor cross_entropy(Graph& graph, const Tensor& logits, std::span<const int> targets);

// Mean squared difference of equally sized tensors.
Tensor mse_loss(Graph& graph, const Tensor& pred, const Tensor& gold);

// Multi-head scaled dot-product self-attention over a packed batch.
// q, k, v are [batch·seq_len × d_model]; heads take contiguous column blocks.
// Keys whose key_mask entry (indexed b·seq_len + t) is false get -inf logits.
// When probs_out is given it receives the attention probabilities laid out
// [batch][head][query][key].
Tensor attention(Graph& graph, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t seq_len, std::size_t n_heads, const std::vector<bool>& key_mask,
                 std::vector<double>* probs_out = nullptr);

}  // namespace rcnn
