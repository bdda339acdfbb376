#pragma once

#include <string>
#include <vector>

#include "prefopt/objectives.hpp"

namespace prefopt::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  double max_err = 0.0;
  std::string detail;
};

// Reverse-mode vs central finite differences (h = 1e-4, tol = 1e-4) on random
// mlp models over V = 32, 200 sampled coordinates per model. For acpo the
// calibration coefficients are frozen at the base point, matching what the
// optimizer differentiates.
CheckResult gradcheck(rewards::Objective kind, int seeds);

// Autodiff gradient of the asymmetric loss vs the closed-form gradient that
// holds the coefficient constant, on random batches; relative tolerance 1e-10.
// With StopGradMode::Broken the check must fail (deliberately leaky detach).
CheckResult stop_gradient_oracle(int batches, objectives::StopGradMode sg);

// The four boundary cases of the calibration coefficient plus 1000 fuzzed
// triples: always finite and inside [alpha_lo, alpha_hi].
CheckResult alpha_boundary();

// acpo with alpha forced to 1 equals dpo bitwise (values and gradients);
// dpo-shift with lambda = 1 equals dpo bitwise.
CheckResult degenerations();

// Everything cmd verify runs, in print order.
std::vector<CheckResult> run_all(int seeds, bool inject_alpha_fault);

std::string format_result(const CheckResult& r);

}  // namespace prefopt::verify
