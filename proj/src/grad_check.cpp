#include "rcnn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rcnn/random.hpp"

namespace rcnn {

namespace {

double eval_loss(const LossBuilder& loss) {
  Graph graph(/*recording=*/false);
  return loss(graph)[0];
}

std::vector<std::size_t> pick_coords(std::span<const double> analytic, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> all(analytic.size());
  std::iota(all.begin(), all.end(), 0);
  if (limit == 0 || analytic.size() <= limit) return all;
  std::size_t top = 0;
  for (std::size_t i = 1; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) > std::abs(analytic[top])) top = i;
  }
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<std::size_t> picked{top};
  for (std::size_t i : all) {
    if (picked.size() == limit) break;
    if (i != top) picked.push_back(i);
  }
  return picked;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, const ParameterList& inputs, const GradCheckOptions& options) {
  std::vector<Tensor> tensors;
  for (const auto& in : inputs) {
    Tensor t = in.tensor;
    t.set_requires_grad(true);
    tensors.push_back(t);
  }
  double loss_scale = 1.0;
  {
    Graph graph;
    Tensor l = loss(graph);
    graph.backward(l);
    loss_scale = std::max(1.0, std::abs(l[0]));
  }
  const double floor = std::max(1e-8, options.noise_floor * loss_scale);

  Rng rng = make_stream(options.seed, "gradcheck");
  const double h = options.step;
  GradCheckResult result;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    Tensor& t = tensors[ti];
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto coords = pick_coords(analytic, options.max_coords_per_tensor, rng);
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t i : coords) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = eval_loss(loss);
      t[i] = orig - h;
      const double down = eval_loss(loss);
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      max_a = std::max(max_a, std::abs(analytic[i]));
      max_n = std::max(max_n, std::abs(numeric));
    }
    const double rel = max_diff / std::max(floor, max_a + max_n);
    result.tensors.push_back({inputs[ti].name, rel, coords.size()});
    result.max_relative_error = std::max(result.max_relative_error, rel);
    t.zero_grad();
  }
  return result;
}

}  // namespace rcnn
