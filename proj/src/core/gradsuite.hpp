#pragma once

#include "gradcheck.hpp"

namespace uvf {

// Finite-difference checks for every differentiable op, the composite
// blocks, and (optionally) both end-to-end segmentation models plus the
// pre-training model at the tiny config. Model checks sample coordinates;
// op checks are exhaustive.
std::vector<GradReport> run_gradient_suite(bool include_models,
                                           int64_t model_coords_per_leaf = 2);

}  // namespace uvf
