#include "rcnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rcnn/errors.hpp"

namespace rcnn {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Accumulates upstream gradient of `out` into `in` when `in` is tracked.
template <typename F>
void accumulate(const Tensor& in, F&& f) {
  Tensor handle = in;
  if (handle.requires_grad()) f(handle.grad());
}

// o[m×n] += a[m×k]·b[k×n]. Four rows of `a` share each pass over a row of `b`.
void gemm_accumulate(const double* __restrict a, const double* __restrict b, double* __restrict o, std::size_t m,
                     std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* o0 = o + i * n;
    double* o1 = o0 + n;
    double* o2 = o1 + n;
    double* o3 = o2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = a[i * k + p], x1 = a[(i + 1) * k + p], x2 = a[(i + 2) * k + p], x3 = a[(i + 3) * k + p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = br[j];
        o0[j] += x0 * bj;
        o1[j] += x1 * bj;
        o2[j] += x2 * bj;
        o3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    double* orow = o + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = a[i * k + p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * br[j];
    }
  }
}

std::vector<double> transposed(std::span<const double> v, std::size_t rows, std::size_t cols) {
  std::vector<double> t(v.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = v[r * cols + c];
  return t;
}

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Tensor matmul(Graph& graph, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({m, n});
  gemm_accumulate(a.values().data(), b.values().data(), out.values().data(), m, k, n);
  graph.record(OpKind::kMatmul, {a, b}, out, [a, b, out, m, k, n]() mutable {
    auto g = out.grad();
    // ga += g·bᵀ, gb += aᵀ·g
    accumulate(a, [&](std::span<double> ga) {
      const auto bt = transposed(b.values(), k, n);
      gemm_accumulate(g.data(), bt.data(), ga.data(), m, n, k);
    });
    accumulate(b, [&](std::span<double> gb) {
      const auto at = transposed(a.values(), m, k);
      gemm_accumulate(at.data(), g.data(), gb.data(), k, m, n);
    });
  });
  return out;
}

Tensor transpose(Graph& graph, const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  graph.record(OpKind::kTranspose, {a}, out, [a, out, m, n]() mutable {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  });
  return out;
}

Tensor add(Graph& graph, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  graph.record(OpKind::kAdd, {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  });
  return out;
}

Tensor sub(Graph& graph, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  graph.record(OpKind::kSub, {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
  return out;
}

Tensor mul(Graph& graph, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  graph.record(OpKind::kMul, {a, b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      auto bv = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      auto av = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
  return out;
}

Tensor scale(Graph& graph, const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
  graph.record(OpKind::kScale, {a}, out, [a, out, factor]() mutable {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  });
  return out;
}

Tensor add_row_vector(Graph& graph, const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row_vector");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) {
    throw DimensionError("add_row_vector: bias " + shape_string(bias.shape()) + " does not match columns of " +
                         shape_string(x.shape()));
  }
  Tensor out(x.shape());
  auto xv = x.values(), bv = bias.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + bv[j];
  graph.record(OpKind::kAddRowVector, {x, bias}, out, [x, bias, out, m, n]() mutable {
    auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    accumulate(bias, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    });
  });
  return out;
}

Tensor tanh(Graph& graph, const Tensor& x) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(xv[i]);
  graph.record(OpKind::kTanh, {x}, out, [x, out]() mutable {
    auto g = out.grad();
    auto ov = out.values();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - ov[i] * ov[i]);
    });
  });
  return out;
}

Tensor sigmoid(Graph& graph, const Tensor& x) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double v = xv[i];
    // Split by sign so exp never overflows.
    if (v >= 0) {
      ov[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      ov[i] = e / (1.0 + e);
    }
  }
  graph.record(OpKind::kSigmoid, {x}, out, [x, out]() mutable {
    auto g = out.grad();
    auto ov = out.values();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ov[i] * (1.0 - ov[i]);
    });
  });
  return out;
}

Tensor gelu(Graph& graph, const Tensor& x) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double v = xv[i];
    ov[i] = 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v)));
  }
  graph.record(OpKind::kGelu, {x}, out, [x, out]() mutable {
    auto g = out.grad();
    auto xv = x.values();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double t = std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v));
        const double dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * v * v);
        gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    });
  });
  return out;
}

Tensor softmax(Graph& graph, const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  Tensor out(shape);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      auto idx = [&](std::size_t l) { return (o * len + l) * inner + in; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, xv[idx(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        ov[idx(l)] = std::exp(xv[idx(l)] - mx);
        z += ov[idx(l)];
      }
      for (std::size_t l = 0; l < len; ++l) ov[idx(l)] /= z;
    }
  }
  graph.record(OpKind::kSoftmax, {x}, out, [x, out, outer, inner, len]() mutable {
    auto g = out.grad();
    auto ov = out.values();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          auto idx = [&](std::size_t l) { return (o * len + l) * inner + in; };
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) dot += g[idx(l)] * ov[idx(l)];
          for (std::size_t l = 0; l < len; ++l) gx[idx(l)] += ov[idx(l)] * (g[idx(l)] - dot);
        }
      }
    });
  });
  return out;
}

Tensor layer_norm(Graph& graph, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " do not match last dimension of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  auto xv = x.values(), gv = gain.values(), bv = bias.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * d];
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mean) * inv_std[r];
      ov[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  graph.record(OpKind::kLayerNorm, {x, gain, bias}, out,
               [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d]() mutable {
                 auto g = out.grad();
                 accumulate(gain, [&](std::span<double> gg) {
                   for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
                 });
                 accumulate(bias, [&](std::span<double> gb) {
                   for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                 });
                 accumulate(x, [&](std::span<double> gx) {
                   auto gv = gain.values();
                   const double inv_d = 1.0 / static_cast<double>(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double dxh = g[r * d + j] * gv[j];
                       mean_dxhat += dxh;
                       mean_dxhat_xhat += dxh * xhat[r * d + j];
                     }
                     mean_dxhat *= inv_d;
                     mean_dxhat_xhat *= inv_d;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double dxh = g[r * d + j] * gv[j];
                       gx[r * d + j] += inv_std[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
                     }
                   }
                 });
               });
  return out;
}

Tensor embedding(Graph& graph, const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw DimensionError("embedding: no ids given");
  Tensor out({ids.size(), d});
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw VocabularyError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(vocab) + " rows");
    }
    std::copy_n(&tv[static_cast<std::size_t>(ids[i]) * d], d, &ov[i * d]);
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  graph.record(OpKind::kEmbedding, {table}, out, [table, out, id_copy = std::move(id_copy), d]() mutable {
    auto g = out.grad();
    accumulate(table, [&](std::span<double> gt) {
      for (std::size_t i = 0; i < id_copy.size(); ++i) {
        const std::size_t base = static_cast<std::size_t>(id_copy[i]) * d;
        for (std::size_t j = 0; j < d; ++j) gt[base + j] += g[i * d + j];
      }
    });
  });
  return out;
}

Tensor slice_rows(Graph& graph, const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t n = x.dim(1);
  if (count == 0 || begin + count > x.dim(0)) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.shape()));
  }
  Tensor out({count, n});
  auto xv = x.values();
  std::copy_n(&xv[begin * n], count * n, out.values().data());
  graph.record(OpKind::kSliceRows, {x}, out, [x, out, begin, n]() mutable {
    auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
  });
  return out;
}

Tensor slice_cols(Graph& graph, const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(x.shape()));
  }
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = x.at(i, begin + j);
  graph.record(OpKind::kSliceCols, {x}, out, [x, out, begin, m, n, count]() mutable {
    auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
    });
  });
  return out;
}

Tensor concat_rows(Graph& graph, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t n = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    rows += p.dim(0);
  }
  Tensor out({rows, n});
  auto ov = out.values();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), ov.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  graph.record(OpKind::kConcatRows, inputs, out, [inputs, out]() mutable {
    auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : inputs) {
      accumulate(p, [&](std::span<double> gp) {
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      });
      offset += p.size();
    }
  });
  return out;
}

Tensor concat_cols(Graph& graph, std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    cols += p.dim(1);
  }
  Tensor out({m, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, offset + j) = p.at(i, j);
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  graph.record(OpKind::kConcatCols, inputs, out, [inputs, out, m, cols]() mutable {
    auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : inputs) {
      const std::size_t w = p.dim(1);
      accumulate(p, [&](std::span<double> gp) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + offset + j];
      });
      offset += w;
    }
  });
  return out;
}

Tensor select_rows(Graph& graph, const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "select_rows");
  if (rows.empty()) throw DimensionError("select_rows: no rows selected");
  const std::size_t n = x.dim(1);
  Tensor out({rows.size(), n});
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) {
      throw DimensionError("select_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(x.shape()));
    }
    std::copy_n(&xv[rows[i] * n], n, &ov[i * n]);
  }
  std::vector<std::size_t> row_copy(rows.begin(), rows.end());
  graph.record(OpKind::kSelectRows, {x}, out, [x, out, row_copy = std::move(row_copy), n]() mutable {
    auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < row_copy.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) gx[row_copy[i] * n + j] += g[i * n + j];
    });
  });
  return out;
}

Tensor reshape(Graph& graph, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  graph.record(OpKind::kReshape, {x}, out, [x, out]() mutable {
    auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
  return out;
}

Tensor blend_rows(Graph& graph, const std::vector<bool>& row_mask, const Tensor& a, const Tensor& b) {
  require_matrix(a, "blend_rows");
  require_same_shape(a, b, "blend_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row_mask.size() != m) {
    throw DimensionError("blend_rows: mask length " + std::to_string(row_mask.size()) + " vs " + shape_string(a.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const auto src = row_mask[i] ? a.values() : b.values();
    std::copy_n(&src[i * n], n, &out.values()[i * n]);
  }
  graph.record(OpKind::kBlendRows, {a, b}, out, [row_mask, a, b, out, m, n]() mutable {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < m; ++i)
        if (row_mask[i])
          for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j];
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < m; ++i)
        if (!row_mask[i])
          for (std::size_t j = 0; j < n; ++j) gb[i * n + j] += g[i * n + j];
    });
  });
  return out;
}

Tensor max_over_time(Graph& graph, const Tensor& x, const std::vector<bool>& mask) {
  require_matrix(x, "max_over_time");
  const std::size_t steps = x.dim(0), d = x.dim(1);
  if (mask.size() != steps) {
    throw DimensionError("max_over_time: mask length " + std::to_string(mask.size()) + " vs " +
                         shape_string(x.shape()));
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw ContractError("max_over_time: every position is masked, nothing to pool");
  }
  Tensor out({d});
  std::vector<std::size_t> argmax(d, steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (!mask[t]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      if (argmax[j] == steps || x.at(t, j) > out[j]) {
        out[j] = x.at(t, j);
        argmax[j] = t;
      }
    }
  }
  graph.record(OpKind::kMaxOverTime, {x}, out, [x, out, argmax = std::move(argmax), d]() mutable {
    auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t j = 0; j < d; ++j) gx[argmax[j] * d + j] += g[j];
    });
  });
  return out;
}

Tensor dropout(Graph& graph, const Tensor& x, double p, Rng* rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (rng == nullptr || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double inv_keep = 1.0 / (1.0 - p);
  std::vector<double> factor(x.size());
  for (auto& f : factor) f = keep(*rng) ? inv_keep : 0.0;
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor[i];
  graph.record(OpKind::kDropout, {x}, out, [x, out, factor = std::move(factor)]() mutable {
    auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
    });
  });
  return out;
}

Tensor sum(Graph& graph, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  graph.record(OpKind::kSum, {x}, out, [x, out]() mutable {
    const double g = out.grad()[0];
    accumulate(x, [&](std::span<double> gx) {
      for (auto& v : gx) v += g;
    });
  });
  return out;
}

Tensor cross_entropy(Graph& graph, const Tensor& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.shape()));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw LabelError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  auto lv = logits.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = &lv[b * classes];
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - log_z);
    loss += log_z - row[static_cast<std::size_t>(targets[b])];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(batch));
  std::vector<int> target_copy(targets.begin(), targets.end());
  graph.record(OpKind::kCrossEntropy, {logits}, out,
               [logits, out, probs = std::move(probs), target_copy = std::move(target_copy), batch, classes]() mutable {
                 const double g = out.grad()[0] / static_cast<double>(batch);
                 accumulate(logits, [&](std::span<double> gl) {
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t c = 0; c < classes; ++c) {
                       const double onehot = static_cast<int>(c) == target_copy[b] ? 1.0 : 0.0;
                       gl[b * classes + c] += g * (probs[b * classes + c] - onehot);
                     }
                   }
                 });
               });
  return out;
}

Tensor mse_loss(Graph& graph, const Tensor& pred, const Tensor& gold) {
  if (pred.size() != gold.size()) {
    throw DimensionError("mse_loss: length mismatch " + shape_string(pred.shape()) + " vs " +
                         shape_string(gold.shape()));
  }
  const std::size_t n = pred.size();
  auto pv = pred.values(), gv = gold.values();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (pv[i] - gv[i]) * (pv[i] - gv[i]);
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  graph.record(OpKind::kMseLoss, {pred, gold}, out, [pred, gold, out, n]() mutable {
    const double g = out.grad()[0] * 2.0 / static_cast<double>(n);
    auto pv = pred.values(), gv = gold.values();
    accumulate(pred, [&](std::span<double> gp) {
      for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pv[i] - gv[i]);
    });
    accumulate(gold, [&](std::span<double> gg) {
      for (std::size_t i = 0; i < n; ++i) gg[i] -= g * (pv[i] - gv[i]);
    });
  });
  return out;
}

Tensor attention(Graph& graph, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t seq_len, std::size_t n_heads, const std::vector<bool>& key_mask,
                 std::vector<double>* probs_out) {
  require_matrix(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t d = q.dim(1);
  if (q.dim(0) != batch * seq_len) {
    throw DimensionError("attention: " + shape_string(q.shape()) + " is not " + std::to_string(batch) + "x" +
                         std::to_string(seq_len) + " positions");
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
  if (key_mask.size() != batch * seq_len) {
    throw DimensionError("attention: key mask has " + std::to_string(key_mask.size()) + " entries, expected " +
                         std::to_string(batch * seq_len));
  }
  const std::size_t dk = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t tt = seq_len * seq_len;
  std::vector<double> probs(batch * n_heads * tt, 0.0);
  Tensor out({batch * seq_len, d});
  auto qv = q.values(), kv = k.values(), vv = v.values();
  auto ov = out.values();

  for (std::size_t b = 0; b < batch; ++b) {
    bool any_key = false;
    for (std::size_t t = 0; t < seq_len; ++t) any_key = any_key || key_mask[b * seq_len + t];
    if (!any_key) throw ContractError("attention: sequence " + std::to_string(b) + " has no unmasked key");
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t col = h * dk;
      double* p = &probs[(b * n_heads + h) * tt];
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* qi = &qv[(b * seq_len + i) * d + col];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!key_mask[b * seq_len + j]) continue;
          const double* kj = &kv[(b * seq_len + j) * d + col];
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          p[i * seq_len + j] = s * inv_sqrt;
          mx = std::max(mx, p[i * seq_len + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!key_mask[b * seq_len + j]) continue;
          p[i * seq_len + j] = std::exp(p[i * seq_len + j] - mx);
          z += p[i * seq_len + j];
        }
        double* oi = &ov[(b * seq_len + i) * d + col];
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!key_mask[b * seq_len + j]) continue;
          p[i * seq_len + j] /= z;
          const double* vj = &vv[(b * seq_len + j) * d + col];
          for (std::size_t c = 0; c < dk; ++c) oi[c] += p[i * seq_len + j] * vj[c];
        }
      }
    }
  }
  if (probs_out != nullptr) *probs_out = probs;

  graph.record(OpKind::kAttention, {q, k, v}, out,
               [q, k, v, out, probs = std::move(probs), batch, seq_len, n_heads, d, dk, inv_sqrt, tt]() mutable {
                 auto g = out.grad();
                 auto qv = q.values(), kv = k.values(), vv = v.values();
                 std::vector<double> dq(q.size(), 0.0), dk_buf(k.size(), 0.0), dv(v.size(), 0.0);
                 std::vector<double> dp(seq_len);
                 for (std::size_t b = 0; b < batch; ++b) {
                   for (std::size_t h = 0; h < n_heads; ++h) {
                     const std::size_t col = h * dk;
                     const double* p = &probs[(b * n_heads + h) * tt];
                     for (std::size_t i = 0; i < seq_len; ++i) {
                       const double* gi = &g[(b * seq_len + i) * d + col];
                       // dP = dO·Vᵀ, dV += Pᵀ·dO
                       double row_dot = 0.0;
                       for (std::size_t j = 0; j < seq_len; ++j) {
                         const double pij = p[i * seq_len + j];
                         if (pij == 0.0) {
                           dp[j] = 0.0;
                           continue;
                         }
                         const double* vj = &vv[(b * seq_len + j) * d + col];
                         double* dvj = &dv[(b * seq_len + j) * d + col];
                         double s = 0.0;
                         for (std::size_t c = 0; c < dk; ++c) {
                           s += gi[c] * vj[c];
                           dvj[c] += pij * gi[c];
                         }
                         dp[j] = s;
                         row_dot += pij * s;
                       }
                       // dS = P ∘ (dP − Σ P·dP), scaled back through 1/√dk
                       const double* qi = &qv[(b * seq_len + i) * d + col];
                       double* dqi = &dq[(b * seq_len + i) * d + col];
                       for (std::size_t j = 0; j < seq_len; ++j) {
                         const double pij = p[i * seq_len + j];
                         if (pij == 0.0) continue;
                         const double ds = pij * (dp[j] - row_dot) * inv_sqrt;
                         const double* kj = &kv[(b * seq_len + j) * d + col];
                         double* dkj = &dk_buf[(b * seq_len + j) * d + col];
                         for (std::size_t c = 0; c < dk; ++c) {
                           dqi[c] += ds * kj[c];
                           dkj[c] += ds * qi[c];
                         }
                       }
                     }
                   }
                 }
                 accumulate(q, [&](std::span<double> gq) {
                   for (std::size_t i = 0; i < dq.size(); ++i) gq[i] += dq[i];
                 });
                 accumulate(k, [&](std::span<double> gk) {
                   for (std::size_t i = 0; i < dk_buf.size(); ++i) gk[i] += dk_buf[i];
                 });
                 accumulate(v, [&](std::span<double> gv) {
                   for (std::size_t i = 0; i < dv.size(); ++i) gv[i] += dv[i];
                 });
               });
  return out;
}

}  // namespace rcnn
