#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "tensor.hpp"

namespace uvf {

// Integer label field over a 3D lattice.
struct LabelVolume {
  std::array<int64_t, 3> dims{};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<uint16_t> data;

  int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
  uint16_t at(int64_t x, int64_t y, int64_t z) const {
    return data[static_cast<size_t>((x * dims[1] + y) * dims[2] + z)];
  }
};

// Hard-label Dice 2|A∩B| / (|A|+|B|); empty-vs-empty is 1.0 by convention.
double dice_score(const LabelVolume& pred, const LabelVolume& gt, int class_id);

// Symmetric Hausdorff over 6-connectivity boundary voxels with physical
// spacing; percentile=100 gives the max, 95 gives HD95 (nearest-rank per
// direction, then max of the two directions). Throws DomainError when either
// mask is empty.
double hausdorff(const LabelVolume& pred, const LabelVolume& gt, int class_id,
                 const std::array<double, 3>& spacing, double percentile = 100.0);

// Boundary voxels of {label == class_id} under 6-connectivity (a voxel whose
// face neighbor is outside the mask or outside the volume).
std::vector<std::array<int64_t, 3>> boundary_voxels(const LabelVolume& v, int class_id);

struct ClassEval {
  double dice = 0.0;
  double hausdorff = 0.0;  // valid only when hd_valid
  double hd95 = 0.0;
  bool hd_valid = false;   // false when either mask is empty for the class
};

struct EvalResult {
  std::vector<ClassEval> per_class;  // classes 1..K-1 (foreground)
  double mean_dice = 0.0;
};

// Foreground evaluation for classes 1..K-1; empty-mask HD cases are flagged,
// never reported as 0.
EvalResult evaluate_labels(const LabelVolume& pred, const LabelVolume& gt, int num_classes);

}  // namespace uvf
