#include "vlp/schedule.hpp"

#include <cmath>
#include <string>

#include "vlp/errors.hpp"

namespace vlp {

double lr_schedule(int64_t step, int64_t total_steps, double base_lr, double warmup_fraction,
                   DecayStyle style) {
  if (total_steps <= 0) throw ValueError("lr_schedule needs total_steps > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw ValueError("warmup_fraction must be in [0,1)");
  if (step < 0 || step > total_steps)
    throw ValueError("step " + std::to_string(step) + " outside [0," +
                     std::to_string(total_steps) + "]");
  const int64_t warmup = std::llround(warmup_fraction * static_cast<double>(total_steps));
  if (step <= warmup)
    return warmup == 0 ? base_lr
                       : base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (style == DecayStyle::ConstantAfterWarmup) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

}  // namespace vlp
