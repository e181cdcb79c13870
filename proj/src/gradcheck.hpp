#pragma once

#include "ops.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cocn {

// Scalar-valued function of one matrix input built on a fresh tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Central finite differences with step eps against the tape gradient.
// Returns max over entries of |g_fd - g_ad| / (|g_fd| + 1e-8).
double finite_difference_check(const ScalarFn& f, const Matrix& x, double eps);

struct GradCheckResult {
  std::string op;
  double max_rel_err;
};

// Runs the finite-difference suite over every smooth primitive (random
// inputs in [-1, 1], eps = 1e-5, inputs sampled away from kinks where the op
// has any). Deterministic under seed.
std::vector<GradCheckResult> gradcheck_suite(unsigned seed);

}  // namespace cocn
