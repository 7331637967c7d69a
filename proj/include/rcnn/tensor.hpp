#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rcnn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a handle: copies share storage, so a parameter held by a model
// and the same parameter referenced from a Graph are one object. Use clone()
// for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  bool defined() const { return static_cast<bool>(impl_); }

  std::span<double> values();
  std::span<const double> values() const;
  double& operator[](std::size_t i) { return values()[i]; }
  double operator[](std::size_t i) const { return values()[i]; }
  // 2-D element access.
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  // Turning tracking on allocates a zeroed gradient buffer; off releases it.
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  // Node index in the graph that produced this tensor, -1 for leaves.
  long node_id() const;
  void set_node_id(long id);

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    long node_id = -1;
  };
  std::shared_ptr<Impl> impl_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

enum class OpKind {
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowVector,
  kTanh,
  kSigmoid,
  kGelu,
  kSoftmax,
  kLayerNorm,
  kEmbedding,
  kSliceRows,
  kSliceCols,
  kConcatRows,
  kConcatCols,
  kSelectRows,
  kReshape,
  kBlendRows,
  kMaxOverTime,
  kDropout,
  kSum,
  kCrossEntropy,
  kMseLoss,
  kAttention,
};

const char* op_name(OpKind kind);

// Tape of recorded operations. Nodes are appended as ops execute, so the
// vector order is a topological order and every input precedes its consumer.
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::vector<long> inputs;  // node ids, -1 for leaves
    Tensor output;
    std::function<void()> backward;
  };

  // A non-recording graph computes values only (inference, finite differences).
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  // Registers `output` as produced by `kind` from `inputs`. When recording is
  // off or no input tracks gradients, nothing is stored and the output stays
  // untracked.
  void record(OpKind kind, const std::vector<Tensor>& inputs, Tensor& output,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs every node's backward once in reverse
  // order. Intermediate gradients are reset first; leaf gradients accumulate
  // across calls until zero_grad().
  void backward(const Tensor& loss);

 private:
  bool recording_;
  std::vector<Node> nodes_;
};

inline void backward(Graph& graph, const Tensor& loss) { graph.backward(loss); }

// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(std::span<const double> values, const std::string& what);

}  // namespace rcnn
