#pragma once

#include "decoders.hpp"
#include "losses.hpp"
#include "optim.hpp"

namespace uvf {

// Lightweight skip-connected CNN reconstruction decoder. One cnn_block per
// hop with halved widths, skips from resolutions 1/2, 1/8, 1/32, final 1x1x1
// conv to one channel. Parameter count stays well below the segmentation
// CNN decoder at equal C.
class ReconDecoder {
 public:
  ReconDecoder(const EncoderConfig& enc, ParamRegistry& reg, Rng& rng,
               const std::string& prefix = "recon");

  // skips -> reconstruction [1,1,H,W,D]
  Var decode(const SkipSet& skips) const;

 private:
  CnnBlockParams bottleneck_;  // 16C -> C at 1/32
  CnnBlockParams fuse8_;       // (C + 4C) -> C/2 at 1/8
  CnnBlockParams fuse2_;       // (C/2 + C) -> C/2 at 1/2
  PointwiseParams head_;       // C/2 -> 1 at full resolution
};

// Encoder plus reconstruction decoder sharing one registry, with the
// encoder under the "encoder" prefix so its weights transfer by name into a
// segmentation model.
class PretrainModel {
 public:
  PretrainModel(const EncoderConfig& cfg, uint64_t seed);

  Var recon_forward(const Var& masked_volume) const;

  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  const EncoderConfig& encoder_config() const { return cfg_; }
  int64_t count_parameters() const { return reg_.total_count(); }
  int64_t recon_parameter_count() const { return reg_.count_with_prefix("recon"); }

 private:
  EncoderConfig cfg_;
  ParamRegistry reg_;
  std::unique_ptr<SwinEncoder> encoder_;
  std::unique_ptr<ReconDecoder> decoder_;
};

// One optimizer step on masked_l1(recon(apply_mask(volume)), volume, mask).
// Returns the pre-step loss. Throws DomainError on an empty mask.
double pretrain_step(PretrainModel& model, AdamW& opt, const Tensor& volume,
                     const MaskSpec& mask);

struct SweepCell {
  double ratio = 0.0;
  int64_t patch = 0;
  double final_loss = 0.0;
  double dice = 0.0;       // downstream fine-tune Dice when measured
  bool has_dice = false;
  bool reference = false;  // marks the (0.4, 16) operating point
  bool skipped = false;
  std::string note;
};

struct SweepConfig {
  EncoderConfig encoder = EncoderConfig::tiny();
  std::array<int64_t, 3> vol_shape{32, 32, 32};
  int steps = 30;
  uint64_t seed = 7;
  double lr = 1e-3;
};

// Grid of short pre-training runs over ratio x patch on one synthetic
// volume. Cells whose patch does not divide the volume, or whose mask comes
// out empty, are emitted as skipped rows rather than aborting the sweep.
std::vector<SweepCell> ablation_sweep(const std::vector<double>& ratios,
                                      const std::vector<int64_t>& patch_sizes,
                                      const SweepConfig& cfg);

std::string sweep_csv(const std::vector<SweepCell>& cells);

// Synthetic intensity volume used by sweeps and smoke tests: smooth blob
// pattern plus seeded gaussian noise, roughly zero-centered.
Tensor synth_intensity_volume(const std::array<int64_t, 3>& shape, uint64_t seed);

}  // namespace uvf
