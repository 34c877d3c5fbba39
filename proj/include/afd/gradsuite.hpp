#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afd/gradcheck.hpp"

namespace afd {

struct GradSuiteCase {
  std::string name;
  std::vector<GradCheckResult> results;
  bool passed = false;
};

/// End-to-end finite-difference checks on small seeded problems (every
/// width <= 16): the multi-positive contrastive loss with a learnable
/// temperature, fused attention, and the conditioned LM cross-entropy with
/// open gates.
std::vector<GradSuiteCase> run_gradcheck_suite(std::uint64_t seed);

}  // namespace afd
