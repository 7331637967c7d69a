#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rcnn/config.hpp"

namespace rcnn {

// Finite-difference checks of every primitive and of the whole
// encoder + head stack, repeated over consecutive seeds.
struct GradSuiteOptions {
  std::size_t seeds = 1;
  std::uint64_t first_seed = 42;
  bool primitives = true;
  bool stack = true;
  // Stack model; dropout is forced off and init_std raised so attention
  // gradients sit well above difference noise.
  ModelConfig stack_config = ModelConfig::toy();
  double stack_init_std = 0.2;
  std::size_t stack_coords_per_tensor = 12;
};

struct GradSuiteEntry {
  std::string name;  // "matmul", "stack/binary", ...
  std::uint64_t seed = 0;
  double relative_error = 0.0;
  std::string worst_tensor;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  double max_relative_error = 0.0;
  double seconds = 0.0;

  const GradSuiteEntry* worst() const;
  Json to_json() const;
};

GradSuiteReport run_grad_suite(const GradSuiteOptions& options);

}  // namespace rcnn
