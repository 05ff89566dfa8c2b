#include "mask.hpp"

#include <algorithm>
#include <cmath>

#include "rng.hpp"

namespace uvf {

std::vector<int64_t> MaskSpec::masked_voxels() const {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(masked_voxel_count));
  const int64_t W = vol[1], D = vol[2];
  for (int64_t cube : masked_cubes) {
    int64_t cx = cube / (grid[1] * grid[2]);
    int64_t cy = (cube / grid[2]) % grid[1];
    int64_t cz = cube % grid[2];
    for (int64_t x = cx * patch; x < (cx + 1) * patch; ++x)
      for (int64_t y = cy * patch; y < (cy + 1) * patch; ++y)
        for (int64_t z = cz * patch; z < (cz + 1) * patch; ++z)
          out.push_back((x * W + y) * D + z);
  }
  std::sort(out.begin(), out.end());
  return out;
}

MaskSpec generate_mask(const std::array<int64_t, 3>& vol_shape, int64_t patch, double ratio,
                       uint64_t seed) {
  if (patch < 1) throw ConfigError("generate_mask: patch must be >= 1");
  if (ratio < 0.0 || ratio > 1.0)
    throw DomainError("generate_mask: ratio must lie in [0,1], got " + std::to_string(ratio));
  MaskSpec m;
  m.patch = patch;
  m.ratio = ratio;
  m.vol = vol_shape;
  m.seed = seed;
  for (int a = 0; a < 3; ++a) {
    if (vol_shape[a] % patch != 0)
      throw ShapeError("generate_mask: extent " + std::to_string(vol_shape[a]) +
                       " not divisible by patch " + std::to_string(patch));
    m.grid[a] = vol_shape[a] / patch;
  }
  int64_t n = m.total_cubes();
  // round-half-up
  int64_t k = static_cast<int64_t>(std::floor(ratio * double(n) + 0.5));
  Rng rng(seed);
  m.masked_cubes = rng.sample_without_replacement(n, k);
  std::sort(m.masked_cubes.begin(), m.masked_cubes.end());
  m.masked_voxel_count = k * patch * patch * patch;
  return m;
}

Tensor apply_mask(const Tensor& volume, const MaskSpec& mask, double fill) {
  const Shape& s = volume.shape();
  if (s.size() != 5 || s[0] != 1 || s[1] != 1 || s[2] != mask.vol[0] ||
      s[3] != mask.vol[1] || s[4] != mask.vol[2])
    throw ShapeError("apply_mask: volume shape " + shape_str(s) +
                     " does not match mask grid");
  Tensor out = volume;
  for (int64_t v : mask.masked_voxels()) out[v] = fill;
  return out;
}

}  // namespace uvf
