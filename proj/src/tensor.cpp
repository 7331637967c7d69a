#include "rcnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rcnn/errors.hpp"

namespace rcnn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape.empty()) throw DimensionError("tensor needs at least one dimension");
  impl_->values.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  if (shape.empty()) throw DimensionError("tensor needs at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->values.size(); }

std::span<double> Tensor::values() { return impl_->values; }
std::span<const double> Tensor::values() const { return impl_->values; }

double& Tensor::at(std::size_t r, std::size_t c) { return impl_->values[r * impl_->shape[1] + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return impl_->values[r * impl_->shape[1] + c]; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  } else {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<double> Tensor::grad() { return impl_->grad; }
std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

long Tensor::node_id() const { return impl_->node_id; }
void Tensor::set_node_id(long id) { impl_->node_id = id; }

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->values); }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddRowVector: return "add_row_vector";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSelectRows: return "select_rows";
    case OpKind::kReshape: return "reshape";
    case OpKind::kBlendRows: return "blend_rows";
    case OpKind::kMaxOverTime: return "max_over_time";
    case OpKind::kDropout: return "dropout";
    case OpKind::kSum: return "sum";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kMseLoss: return "mse_loss";
    case OpKind::kAttention: return "attention";
  }
  return "unknown";
}

void Graph::record(OpKind kind, const std::vector<Tensor>& inputs, Tensor& output,
                   std::function<void()> backward) {
  check_finite(output.values(), op_name(kind));
  if (!recording_) return;
  bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return;
  Node node{kind, {}, output, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) node.inputs.push_back(t.node_id());
  output.set_requires_grad(true);
  output.set_node_id(static_cast<long>(nodes_.size()));
  nodes_.push_back(std::move(node));
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("loss is not reachable from any tracked tensor");
  }
  for (auto& node : nodes_) node.output.zero_grad();
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->backward) it->backward();
  }
  for (auto& node : nodes_) check_finite(node.output.grad(), std::string("gradient of ") + op_name(node.kind));
}

void check_finite(std::span<const double> values, const std::string& what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(what + ": non-finite value encountered");
  }
}

}  // namespace rcnn
