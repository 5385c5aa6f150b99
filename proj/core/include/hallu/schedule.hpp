#pragma once

#include <cstddef>
#include <cstdint>

namespace hallu {

// Linear warmup from 0 to `peak` over `warmup_steps`, then cosine decay to
// final_fraction * peak at `total_steps`.
struct LrSchedule {
  double peak = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  double final_fraction = 0.05;

  // Throws Error when step is outside [0, total_steps].
  double at(std::int64_t step) const;
  void validate() const;
};

// base_lr = constant / sqrt(non-embedding parameters)
double base_learning_rate(double constant, std::size_t nonembedding_params);

}  // namespace hallu
