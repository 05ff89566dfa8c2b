#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "losses.hpp"
#include "metrics.hpp"
#include "rng.hpp"

using namespace uvf;

TEST_CASE("perfect one-hot prediction gives zero loss") {
  const int64_t K = 3, N = 7;
  std::vector<uint16_t> labels{0, 1, 2, 1, 0, 2, 2};
  Tensor onehot = onehot_from_labels(labels, K);
  Var probs = make_const(onehot);
  double loss = dice_ce_loss(probs, onehot, 0.0)->value[0];
  CHECK(std::abs(loss) < 1e-9);
}

TEST_CASE("two-voxel instance evaluates to exactly one third") {
  // K=1, N=2, G=[1,0], Y=[1,1]: dice term 1 - 2/(1+2), CE term 0.
  Tensor g({1, 2}, {1.0, 0.0});
  Tensor y({1, 2}, {1.0, 1.0});
  double loss = dice_ce_loss(make_const(y), g, 0.0)->value[0];
  CHECK(std::abs(loss - 1.0 / 3.0) < 1e-9);
}

TEST_CASE("deep supervision weights sum as 1.75 L on identical branches") {
  const int64_t K = 2;
  std::vector<uint16_t> labels{0, 1, 1, 0};
  Tensor onehot = onehot_from_labels(labels, K);
  Tensor logits({1, K, 4, 1, 1});
  Rng rng(3);
  for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.gaussian();
  DecoderOutputs outs;
  outs.logits_full = make_const(logits);
  outs.aux1 = make_const(logits);
  outs.aux2 = make_const(logits);
  LossWeights w;
  double single = dice_ce_from_logits(outs.logits_full, onehot)->value[0];
  double total = deep_supervision_loss(outs, onehot, w)->value[0];
  CHECK(total == doctest::Approx(1.75 * single).epsilon(1e-12));

  LossWeights off;
  off.lambda1 = off.lambda2 = 0.0;
  DecoderOutputs main_only;
  main_only.logits_full = outs.logits_full;
  CHECK(deep_supervision_loss(main_only, onehot, off)->value[0] ==
        doctest::Approx(single).epsilon(1e-12));
  CHECK_THROWS_AS(deep_supervision_loss(main_only, onehot, w), ContractError);
}

TEST_CASE("mask generation is deterministic and counts round-half-up") {
  MaskSpec a = generate_mask({96, 96, 96}, 16, 0.4, 123);
  MaskSpec b = generate_mask({96, 96, 96}, 16, 0.4, 123);
  CHECK(a.total_cubes() == 216);
  CHECK(int64_t(a.masked_cubes.size()) == 86);
  CHECK(a.masked_cubes == b.masked_cubes);
  CHECK(a.masked_voxel_count == 86 * 16 * 16 * 16);

  CHECK(generate_mask({32, 32, 32}, 8, 0.0, 1).masked_cubes.empty());
  CHECK(int64_t(generate_mask({32, 32, 32}, 8, 1.0, 1).masked_cubes.size()) == 64);
  // Masked fraction tracks the ratio within one cube.
  for (double r : {0.1, 0.25, 0.5, 0.9}) {
    MaskSpec m = generate_mask({32, 32, 32}, 8, r, 7);
    double frac = double(m.masked_voxel_count) / double(32 * 32 * 32);
    CHECK(std::abs(frac - r) <= 1.0 / double(m.total_cubes()) + 1e-12);
  }
  CHECK_THROWS_AS(generate_mask({33, 32, 32}, 16, 0.4, 1), ShapeError);
  CHECK_THROWS_AS(generate_mask({32, 32, 32}, 16, 1.5, 1), DomainError);
}

TEST_CASE("apply_mask zeroes masked cubes and leaves the rest bit-identical") {
  Tensor vol({1, 1, 8, 8, 8});
  Rng rng(5);
  for (int64_t i = 0; i < vol.numel(); ++i) vol[i] = rng.gaussian();
  MaskSpec m = generate_mask({8, 8, 8}, 4, 0.5, 9);
  Tensor masked = apply_mask(vol, m);
  std::set<int64_t> mv;
  for (int64_t v : m.masked_voxels()) mv.insert(v);
  for (int64_t i = 0; i < vol.numel(); ++i) {
    if (mv.count(i))
      CHECK(masked[i] == 0.0);
    else
      CHECK(masked[i] == vol[i]);
  }
  Tensor none = apply_mask(vol, generate_mask({8, 8, 8}, 4, 0.0, 9));
  for (int64_t i = 0; i < vol.numel(); ++i) CHECK(none[i] == vol[i]);
}

TEST_CASE("masked l1 gradient is exactly zero off the mask") {
  Tensor pred({1, 1, 8, 8, 8}), target({1, 1, 8, 8, 8});
  Rng rng(6);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    pred[i] = rng.gaussian();
    target[i] = rng.gaussian();
  }
  MaskSpec m = generate_mask({8, 8, 8}, 2, 0.3, 4);
  Var p = make_leaf(pred, true);
  backward(masked_l1(p, target, m));
  std::set<int64_t> mv;
  for (int64_t v : m.masked_voxels()) mv.insert(v);
  REQUIRE(p->grad_ready);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (mv.count(i))
      CHECK(p->grad[i] != 0.0);
    else
      CHECK(p->grad[i] == 0.0);
  }
  // Value check: mean |diff| over masked voxels.
  double want = 0.0;
  for (int64_t v : m.masked_voxels()) want += std::abs(pred[v] - target[v]);
  want /= double(m.masked_voxel_count);
  CHECK(masked_l1(make_const(pred), target, m)->value[0] ==
        doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS(masked_l1(p, target, generate_mask({8, 8, 8}, 2, 0.0, 4)), DomainError);
}

namespace {

// Independent brute-force implementations used as oracles.
double dice_oracle(const LabelVolume& a, const LabelVolume& b, int cls) {
  std::set<int64_t> sa, sb;
  for (size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] == cls) sa.insert(int64_t(i));
    if (b.data[i] == cls) sb.insert(int64_t(i));
  }
  if (sa.empty() && sb.empty()) return 1.0;
  int64_t inter = 0;
  for (int64_t v : sa) inter += sb.count(v);
  return 2.0 * double(inter) / double(sa.size() + sb.size());
}

std::vector<std::array<int64_t, 3>> boundary_oracle(const LabelVolume& v, int cls) {
  std::vector<std::array<int64_t, 3>> out;
  for (int64_t x = 0; x < v.dims[0]; ++x)
    for (int64_t y = 0; y < v.dims[1]; ++y)
      for (int64_t z = 0; z < v.dims[2]; ++z) {
        if (v.at(x, y, z) != cls) continue;
        bool edge = false;
        const int64_t off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                   {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (const auto& o : off) {
          int64_t nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (nx < 0 || ny < 0 || nz < 0 || nx >= v.dims[0] || ny >= v.dims[1] ||
              nz >= v.dims[2] || v.at(nx, ny, nz) != cls) {
            edge = true;
            break;
          }
        }
        if (edge) out.push_back({x, y, z});
      }
  return out;
}

double hausdorff_oracle(const LabelVolume& a, const LabelVolume& b, int cls,
                        const std::array<double, 3>& sp, double pct) {
  auto ba = boundary_oracle(a, cls), bb = boundary_oracle(b, cls);
  REQUIRE(!ba.empty());
  REQUIRE(!bb.empty());
  auto directed = [&](const auto& from, const auto& to) {
    std::vector<double> ds;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) {
        double dx = double(p[0] - q[0]) * sp[0];
        double dy = double(p[1] - q[1]) * sp[1];
        double dz = double(p[2] - q[2]) * sp[2];
        best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
      }
      ds.push_back(best);
    }
    std::sort(ds.begin(), ds.end());
    size_t rank = size_t(std::ceil(pct / 100.0 * double(ds.size())));
    rank = std::max<size_t>(1, std::min(rank, ds.size()));
    return ds[rank - 1];
  };
  return std::max(directed(ba, bb), directed(bb, ba));
}

LabelVolume random_labels(Rng& rng, int K) {
  LabelVolume v;
  v.dims = {int64_t(1 + rng.bounded(8)), int64_t(1 + rng.bounded(8)),
            int64_t(1 + rng.bounded(8))};
  v.data.resize(size_t(v.numel()));
  for (auto& d : v.data) d = uint16_t(rng.bounded(uint64_t(K)));
  return v;
}

}  // namespace

TEST_CASE("dice and hausdorff match brute-force oracles on random instances") {
  Rng rng(2024);
  int checked_hd = 0;
  for (int trial = 0; trial < 50; ++trial) {
    int K = 2 + int(rng.bounded(3));
    LabelVolume a = random_labels(rng, K);
    LabelVolume b = a;
    b.data.resize(a.data.size());
    for (auto& d : b.data) d = uint16_t(rng.bounded(uint64_t(K)));
    std::array<double, 3> sp{0.5 + rng.uniform(), 0.5 + rng.uniform(), 0.5 + rng.uniform()};
    a.spacing = b.spacing = sp;
    for (int cls = 1; cls < K; ++cls) {
      CHECK(dice_score(a, b, cls) == dice_oracle(a, b, cls));
      bool ea = boundary_oracle(a, cls).empty(), eb = boundary_oracle(b, cls).empty();
      if (ea || eb) {
        CHECK_THROWS_AS(hausdorff(a, b, cls, sp, 100.0), DomainError);
        continue;
      }
      ++checked_hd;
      CHECK(hausdorff(a, b, cls, sp, 100.0) == hausdorff_oracle(a, b, cls, sp, 100.0));
      CHECK(hausdorff(a, b, cls, sp, 95.0) == hausdorff_oracle(a, b, cls, sp, 95.0));
    }
  }
  CHECK(checked_hd > 20);
}

TEST_CASE("the 3-4-5 single-voxel case gives hausdorff 5") {
  LabelVolume a, b;
  a.dims = b.dims = {6, 6, 6};
  a.data.assign(216, 0);
  b.data.assign(216, 0);
  a.data[size_t((0 * 6 + 0) * 6 + 0)] = 1;
  b.data[size_t((3 * 6 + 4) * 6 + 0)] = 1;
  CHECK(hausdorff(a, b, 1, {1.0, 1.0, 1.0}, 100.0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(hausdorff(a, b, 1, {1.0, 1.0, 1.0}, 95.0) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("evaluate_labels flags empty-mask classes instead of reporting zero") {
  LabelVolume pred, gt;
  pred.dims = gt.dims = {4, 4, 4};
  pred.data.assign(64, 0);
  gt.data.assign(64, 0);
  gt.data[0] = 1;  // class 1 only in gt; class 2 nowhere
  EvalResult r = evaluate_labels(pred, gt, 3);
  REQUIRE(r.per_class.size() == 2);
  CHECK_FALSE(r.per_class[0].hd_valid);
  CHECK(r.per_class[0].dice == 0.0);
  CHECK_FALSE(r.per_class[1].hd_valid);
  CHECK(r.per_class[1].dice == 1.0);  // empty vs empty
}
