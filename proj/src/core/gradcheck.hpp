#pragma once

#include <functional>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace uvf {

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  // Acceptable rel error for this check. Central differences cannot resolve
  // every path to the same precision: a check may document a looser bound
  // when the finite-difference estimate itself is the limiting factor.
  double tolerance = 1e-4;
  int64_t worst_index = -1;   // flat index into the worst input, offset by input
  int worst_input = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int64_t coords_checked = 0;
};

// Central finite-difference check of a scalar-valued tensor function.
// fn must be deterministic; this is verified by double evaluation.
// max_coords_per_input = 0 checks every coordinate; otherwise a seeded
// uniform sample of coordinates per input is checked.
GradReport gradcheck(const std::string& op_name,
                     const std::function<Var(const std::vector<Var>&)>& fn,
                     const std::vector<Tensor>& inputs, double eps = 1e-4,
                     int64_t max_coords_per_input = 0, uint64_t sample_seed = 0);

// Same check against pre-existing graph leaves (model parameters plus
// inputs). loss_fn must rebuild the forward graph from the leaves' current
// values on every call.
GradReport gradcheck_leaves(const std::string& op_name, const std::function<Var()>& loss_fn,
                            const std::vector<Var>& leaves, double eps = 1e-4,
                            int64_t max_coords_per_input = 0, uint64_t sample_seed = 0);

}  // namespace uvf
