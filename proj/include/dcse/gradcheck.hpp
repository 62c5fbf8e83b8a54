#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dcse/autodiff.hpp"

namespace dcse {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool ok = true;
  double step = 0.0;  // finite-difference step actually used
};

struct GradCheckParamSummary {
  std::string param;
  bool frozen = false;
  std::size_t checked = 0;
  std::size_t failed = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::vector<GradCheckParamSummary> params;
  double max_rel_error = 0.0;
  bool passed = true;
  std::size_t refined = 0;  // step reductions caused by kinks
};

struct GradCheckOptions {
  double eps = 1e-5;
  // Smallest step tried when the estimates at h and h/2 disagree by more than
  // the tolerance (0 disables the refinement).
  double min_eps = 1e-8;
  double tolerance = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  // Check at most this many elements per parameter (0 = all), chosen with a
  // fixed stride so the selection is deterministic.
  std::size_t max_elements_per_param = 0;
};

// Builds the scalar loss on a fresh tape each time it is called.
using ScalarFunction = std::function<Var<double>(Tape<double>&)>;

// Compares reverse-mode gradients against central differences
// (f(x+h) - f(x-h)) / (2 h) for every element of every parameter, starting
// from h = eps. Each estimate is cross-checked against the one at h/2; when
// they disagree the step crossed a non-differentiable point and h is divided
// by 10, down to min_eps.
// Frozen parameters must receive no gradient at all; any nonzero analytic
// entry on a frozen parameter is reported as a failure.
// Throws NumericalError when the function value is non-finite.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options = {});

}  // namespace dcse
