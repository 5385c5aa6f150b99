#include "hallu/schedule.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "hallu/common.hpp"

namespace hallu {

void LrSchedule::validate() const {
  if (warmup_steps < 0 || total_steps <= warmup_steps) {
    throw ConfigError(fmt::format("schedule needs 0 <= warmup ({}) < total ({})", warmup_steps,
                                  total_steps));
  }
  if (!(peak >= 0.0) || !(final_fraction >= 0.0 && final_fraction <= 1.0)) {
    throw ConfigError("schedule peak must be >= 0 and final_fraction in [0, 1]");
  }
}

double LrSchedule::at(std::int64_t step) const {
  if (step < 0 || step > total_steps) {
    throw Error(fmt::format("step {} outside schedule [0, {}]", step, total_steps));
  }
  if (step < warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return peak * (final_fraction + (1.0 - final_fraction) * cosine);
}

double base_learning_rate(double constant, std::size_t nonembedding_params) {
  return constant / std::sqrt(static_cast<double>(nonembedding_params));
}

}  // namespace hallu
