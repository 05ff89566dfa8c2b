#pragma once

#include "decoders.hpp"
#include "mask.hpp"

namespace uvf {

struct LossWeights {
  double lambda1 = 0.5;
  double lambda2 = 0.25;
  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("loss weights must be >= 0");
  }
};

constexpr double kDiceSmooth = 1e-5;
constexpr double kLogFloor = 1e-12;

// Soft Dice + cross entropy on class-probability rows Y[K,N] against a
// one-hot target G[K,N]:
//   1 - (2/K) sum_k (sum GY + s)/(sum G^2 + sum Y^2 + s) - (1/N) sum G log Y
// smooth=0 reproduces the unsmoothed form (absent classes then contribute a
// 0/0-free ratio only when smooth > 0). Logs are clamped at 1e-12.
Var dice_ce_loss(const Var& probs, const Tensor& onehot, double smooth = kDiceSmooth);

// Softmax over the class axis of logits [1,K,H,W,D], then dice_ce_loss.
Var dice_ce_from_logits(const Var& logits, const Tensor& onehot, double smooth = kDiceSmooth);

// L(G,Y0) + lambda1 L(G,Y1) + lambda2 L(G,Y2); all branches at image
// resolution against the same target.
Var deep_supervision_loss(const DecoderOutputs& outputs, const Tensor& onehot,
                          const LossWeights& weights, double smooth = kDiceSmooth);

// Mean absolute error over masked voxels only. M is the masked voxel count;
// with per_cube=true the sum is divided by the masked cube count instead
// (the two readings differ by the constant p^3).
Var masked_l1(const Var& pred, const Tensor& target, const MaskSpec& mask,
              bool per_cube = false);

// One-hot [K, N] target from an integer label volume.
Tensor onehot_from_labels(const std::vector<uint16_t>& labels, int64_t K);

}  // namespace uvf
