#include "losses.hpp"

namespace uvf {

Var dice_ce_loss(const Var& probs, const Tensor& onehot, double smooth) {
  if (probs->value.ndim() != 2)
    throw ShapeError("dice_ce_loss: probabilities must be [K,N]");
  if (!probs->value.same_shape(onehot))
    throw ShapeError("dice_ce_loss: target shape " + shape_str(onehot.shape()) +
                     " vs probabilities " + shape_str(probs->value.shape()));
  if (smooth < 0.0) throw ConfigError("dice_ce_loss: smooth must be >= 0");
  int64_t K = probs->value.rows(), N = probs->value.cols();
  if (debug_checks_enabled()) {
    for (int64_t n = 0; n < N; ++n) {
      double s = 0.0;
      for (int64_t k = 0; k < K; ++k) s += probs->value.at2(k, n);
      if (std::abs(s - 1.0) > 1e-6)
        throw ContractError("dice_ce_loss: probability columns must sum to 1");
    }
  }
  Var g = make_const(onehot);
  // Dice term
  Var gy = sum_lastaxis(mul(probs, g));                    // [K]
  Var yy = sum_lastaxis(mul(probs, probs));                // [K]
  Tensor gg_t({K});
  for (int64_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (int64_t n = 0; n < N; ++n) s += onehot.at2(k, n) * onehot.at2(k, n);
    gg_t[k] = s + smooth;
  }
  Var num = add_scalar(gy, smooth);
  Var den = add_rowvec(reshape(yy, {1, K}), make_const(std::move(gg_t)));
  Var ratios = div(reshape(num, {1, K}), den);
  Var dice = add_scalar(scale(sum_all(ratios), -2.0 / double(K)), 1.0);
  // Cross entropy term
  Var ce = scale(sum_all(mul(g, clamped_log(probs, kLogFloor))), -1.0 / double(N));
  return add(dice, ce);
}

Var dice_ce_from_logits(const Var& logits, const Tensor& onehot, double smooth) {
  const Shape& s = logits->value.shape();
  if (s.size() != 5 || s[0] != 1) throw ShapeError("dice_ce_from_logits: expect [1,K,H,W,D]");
  int64_t K = s[1];
  int64_t N = s[2] * s[3] * s[4];
  // softmax over classes: [K,N] -> [N,K] softmax -> back
  Var flat = reshape(logits, {K, N});
  Var probs = transpose2d(softmax_lastaxis(transpose2d(flat)));
  return dice_ce_loss(probs, onehot, smooth);
}

Var deep_supervision_loss(const DecoderOutputs& outputs, const Tensor& onehot,
                          const LossWeights& weights, double smooth) {
  weights.validate();
  if (!outputs.logits_full) throw ContractError("deep_supervision_loss: missing main head");
  Var total = dice_ce_from_logits(outputs.logits_full, onehot, smooth);
  if (weights.lambda1 > 0.0 || weights.lambda2 > 0.0) {
    if (!outputs.aux1 || !outputs.aux2)
      throw ContractError("deep_supervision_loss: aux outputs required but missing");
    total = add(total, scale(dice_ce_from_logits(outputs.aux1, onehot, smooth),
                             weights.lambda1));
    total = add(total, scale(dice_ce_from_logits(outputs.aux2, onehot, smooth),
                             weights.lambda2));
  }
  return total;
}

Var masked_l1(const Var& pred, const Tensor& target, const MaskSpec& mask, bool per_cube) {
  if (!pred->value.same_shape(target))
    throw ShapeError("masked_l1: prediction and target shapes differ");
  if (mask.masked_cubes.empty()) throw DomainError("masked_l1: mask is empty");
  auto voxels = mask.masked_voxels();
  Tensor tgt_sel({static_cast<int64_t>(voxels.size()), 1});
  for (size_t i = 0; i < voxels.size(); ++i) tgt_sel[static_cast<int64_t>(i)] = target[voxels[i]];
  Var flat = reshape(pred, {pred->value.numel(), 1});
  Var sel = gather_rows(flat, std::vector<int64_t>(voxels.begin(), voxels.end()));
  Var diff = abs_op(sub(sel, make_const(std::move(tgt_sel))));
  double denom = per_cube ? double(mask.masked_cubes.size()) : double(voxels.size());
  return scale(sum_all(diff), 1.0 / denom);
}

Tensor onehot_from_labels(const std::vector<uint16_t>& labels, int64_t K) {
  int64_t N = static_cast<int64_t>(labels.size());
  Tensor g({K, N}, 0.0);
  for (int64_t n = 0; n < N; ++n) {
    uint16_t c = labels[static_cast<size_t>(n)];
    if (c >= K) throw DomainError("label value " + std::to_string(c) + " >= K");
    g.at2(c, n) = 1.0;
  }
  return g;
}

}  // namespace uvf
