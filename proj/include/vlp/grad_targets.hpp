#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlp/grad_check.hpp"

namespace vlp {

// Loss names accepted by run_loss_grad_check: mlm, moc, vlm, joint,
// triplet, vcr.
const std::vector<std::string>& grad_check_losses();

// Builds a small double-precision model (2 layers, hidden 16) plus a
// deterministic synthetic input for the named loss, then compares the
// backward pass against central differences over every parameter.
GradCheckReport run_loss_grad_check(const std::string& loss, uint64_t seed);

}  // namespace vlp
