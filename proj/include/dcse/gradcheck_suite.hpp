#pragma once

// Finite-difference checks of every differentiable op and of the composed
// model losses on small random instances (double precision).

#include <cstdint>
#include <string>
#include <vector>

#include "dcse/gradcheck.hpp"

namespace dcse {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

enum class GradCheckScale { tiny, small };

GradCheckScale parse_gradcheck_scale(const std::string& s);

// tiny: the model losses run on a 2-turn context with n = 6, d = 8.
std::vector<GradCheckCase> run_gradcheck_suite(GradCheckScale scale, std::uint64_t seed = 1,
                                               const GradCheckOptions& options = {});

}  // namespace dcse
