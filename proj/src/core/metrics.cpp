#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uvf {

double dice_score(const LabelVolume& pred, const LabelVolume& gt, int class_id) {
  if (pred.dims != gt.dims) throw ShapeError("dice_score: volume shapes differ");
  int64_t a = 0, b = 0, inter = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    bool pa = pred.data[i] == class_id;
    bool pb = gt.data[i] == class_id;
    a += pa;
    b += pb;
    inter += pa && pb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * double(inter) / double(a + b);
}

std::vector<std::array<int64_t, 3>> boundary_voxels(const LabelVolume& v, int class_id) {
  std::vector<std::array<int64_t, 3>> out;
  auto inside = [&](int64_t x, int64_t y, int64_t z) {
    if (x < 0 || y < 0 || z < 0 || x >= v.dims[0] || y >= v.dims[1] || z >= v.dims[2])
      return false;
    return v.at(x, y, z) == class_id;
  };
  for (int64_t x = 0; x < v.dims[0]; ++x)
    for (int64_t y = 0; y < v.dims[1]; ++y)
      for (int64_t z = 0; z < v.dims[2]; ++z) {
        if (v.at(x, y, z) != class_id) continue;
        if (!inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) ||
            !inside(x, y + 1, z) || !inside(x, y, z - 1) || !inside(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

namespace {
std::vector<double> directed_distances(const std::vector<std::array<int64_t, 3>>& from,
                                       const std::vector<std::array<int64_t, 3>>& to,
                                       const std::array<double, 3>& sp) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      double dx = (a[0] - b[0]) * sp[0];
      double dy = (a[1] - b[1]) * sp[1];
      double dz = (a[2] - b[2]) * sp[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

double nearest_rank(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  size_t rank = static_cast<size_t>(std::ceil(pct / 100.0 * double(v.size())));
  if (rank < 1) rank = 1;
  if (rank > v.size()) rank = v.size();
  return v[rank - 1];
}
}  // namespace

double hausdorff(const LabelVolume& pred, const LabelVolume& gt, int class_id,
                 const std::array<double, 3>& spacing, double percentile) {
  if (pred.dims != gt.dims) throw ShapeError("hausdorff: volume shapes differ");
  if (percentile <= 0.0 || percentile > 100.0)
    throw ConfigError("hausdorff: percentile must lie in (0,100]");
  auto ba = boundary_voxels(pred, class_id);
  auto bb = boundary_voxels(gt, class_id);
  if (ba.empty() || bb.empty())
    throw DomainError("hausdorff: empty mask for class " + std::to_string(class_id));
  auto dab = directed_distances(ba, bb, spacing);
  auto dba = directed_distances(bb, ba, spacing);
  return std::max(nearest_rank(std::move(dab), percentile),
                  nearest_rank(std::move(dba), percentile));
}

EvalResult evaluate_labels(const LabelVolume& pred, const LabelVolume& gt, int num_classes) {
  EvalResult r;
  double sum = 0.0;
  for (int c = 1; c < num_classes; ++c) {
    ClassEval e;
    e.dice = dice_score(pred, gt, c);
    try {
      e.hausdorff = hausdorff(pred, gt, c, gt.spacing, 100.0);
      e.hd95 = hausdorff(pred, gt, c, gt.spacing, 95.0);
      e.hd_valid = true;
    } catch (const DomainError&) {
      e.hd_valid = false;
      e.hausdorff = e.hd95 = std::numeric_limits<double>::quiet_NaN();
    }
    sum += e.dice;
    r.per_class.push_back(e);
  }
  r.mean_dice = r.per_class.empty() ? 0.0 : sum / double(r.per_class.size());
  return r;
}

}  // namespace uvf
