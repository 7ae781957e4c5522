#pragma once

#include <cstdint>

namespace vlp {

enum class DecayStyle { LinearToZero, ConstantAfterWarmup };

// Piecewise-linear rate: 0 at step 0, base_lr exactly at the warmup
// boundary (round(warmup_fraction * total_steps)), then a straight line
// down to 0 at total_steps, or flat if so configured.
double lr_schedule(int64_t step, int64_t total_steps, double base_lr,
                   double warmup_fraction = 0.1, DecayStyle style = DecayStyle::LinearToZero);

}  // namespace vlp
