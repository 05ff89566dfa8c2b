#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace uvf {

// Reproducible description of which p^3-voxel cubes of a volume are masked.
struct MaskSpec {
  int64_t patch = 16;                 // cube edge in voxels
  double ratio = 0.4;                 // fraction of cubes masked
  std::array<int64_t, 3> grid{};      // (H/p, W/p, D/p)
  std::array<int64_t, 3> vol{};       // (H, W, D)
  uint64_t seed = 0;
  std::vector<int64_t> masked_cubes;  // sorted flat cube indices
  int64_t masked_voxel_count = 0;

  int64_t total_cubes() const { return grid[0] * grid[1] * grid[2]; }

  // Flat voxel indices of all masked voxels, ascending.
  std::vector<int64_t> masked_voxels() const;
};

// Uniform sample without replacement of round-half-up(r * n_cubes) cubes
// from a seeded generator. Identical (shape, p, r, seed) always reproduce
// the identical spec.
MaskSpec generate_mask(const std::array<int64_t, 3>& vol_shape, int64_t patch, double ratio,
                       uint64_t seed);

// Masked cubes' voxels replaced by fill (default 0); unmasked voxels are
// bit-identical to the input.
Tensor apply_mask(const Tensor& volume, const MaskSpec& mask, double fill = 0.0);

}  // namespace uvf
