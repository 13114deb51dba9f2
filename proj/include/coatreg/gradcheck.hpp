#pragma once

// Finite-difference verification of the analytic gradients, in double
// precision with central differences.
//
// Error per check: for every leaf tensor, max|analytic - numeric| divided by
// the larger of the two gradients' max-norms; the check reports the worst
// leaf. Perturbations whose branch signature (see KinkProbe) differs from
// the unperturbed one straddle a non-differentiable point and are skipped.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coatreg/tensor.hpp"

namespace coatreg {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double tol = 1e-5;
  double step = 1e-4;
  // Elements probed per parameter tensor in the end-to-end network check.
  std::size_t network_samples = 6;
  // When non-empty, the backward pass of this op is scaled by
  // (1 + perturb_error) during the analytic pass.
  std::string perturb_op;
  double perturb_error = 1e-3;
  // Restrict to checks whose name contains this substring.
  std::string filter;
};

struct GradcheckResult {
  std::string name;
  double worst_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

struct GradcheckLeaf {
  std::string name;
  Tensor<double> tensor;          // a parameter leaf
  std::vector<std::size_t> probe; // element indices; empty means all
};

// Generic checker: loss() must rebuild the scalar from the leaves' current
// values on every call.
GradcheckResult check_gradient(const std::string& name, const std::vector<GradcheckLeaf>& leaves,
                               const std::function<Tensor<double>()>& loss, const GradcheckOptions& options);

std::vector<std::string> gradcheck_names();
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options);

}  // namespace coatreg
