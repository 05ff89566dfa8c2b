#pragma once

#include <functional>
#include <optional>

#include "losses.hpp"
#include "metrics.hpp"
#include "optim.hpp"
#include "pretrain.hpp"

namespace uvf {

struct AugmentFlags {
  bool flip = true;
  bool rotate90 = true;
  bool intensity_scale = true;
  bool intensity_shift = true;
  bool any() const { return flip || rotate90 || intensity_scale || intensity_shift; }
};

struct TrainConfig {
  double lr = 2e-4;
  int64_t epochs = 1;
  int64_t warmup_steps = 0;
  int64_t batch_size = 1;
  LossWeights weights;
  uint64_t seed = 0;
  AugmentFlags augment;
  int64_t val_every = 50;  // steps between validation passes; 0 disables
  double smooth = kDiceSmooth;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (batch_size != 1) throw ConfigError("only batch_size 1 is supported");
    if (val_every < 0) throw ConfigError("val_every must be >= 0");
    weights.validate();
  }
};

struct SegSample {
  Tensor image;       // [1,1,H,W,D] normalized intensity
  LabelVolume label;  // values in [0,K)
};

struct SlidingWindowBlend {
  enum Kind { constant, gaussian } kind = constant;
};

struct SlidingWindowConfig {
  std::array<int64_t, 3> roi{64, 64, 64};
  double overlap = 0.7;
  SlidingWindowBlend blend;

  void validate() const {
    if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("overlap must lie in [0,1)");
    for (int64_t r : roi)
      if (r < 32 || r % 32 != 0) throw ConfigError("roi extents must be positive multiples of 32");
  }
};

// Seeded augmentation: per-axis flips (p=0.5 each), one random 90-degree
// rotation in a random axis pair, intensity scale in [0.9,1.1] and shift in
// [-0.1,0.1]. Spatial ops move image and label voxels identically;
// intensity ops touch the image only.
SegSample augment(const SegSample& sample, const AugmentFlags& flags, Rng& rng);

// n synthetic K-class samples: a large "organ" ellipsoid (class 1) with a
// smaller embedded ellipsoid per extra class, each class adding a fixed
// intensity contrast, plus gaussian noise sigma=0.1. Deterministic per seed.
std::vector<SegSample> synth_dataset(int64_t n, const std::array<int64_t, 3>& vol_size,
                                     int64_t K, uint64_t seed, double contrast = 0.5,
                                     double noise_sigma = 0.1);

struct StepRecord {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_dice;
};

struct FitResult {
  std::vector<StepRecord> log;
  double best_val_dice = -1.0;
  int64_t best_step = -1;
  std::vector<Tensor> best_params;  // registry-order snapshot at best val Dice
};

// Step-wise training over epochs * |train| steps with warmup+cosine lr.
// Validation (mean foreground Dice over val, or train when val is empty)
// runs every val_every steps and at the end; the best-scoring parameter
// snapshot is kept. NaN loss aborts with a DomainError. on_record, when
// set, sees each StepRecord as it is produced.
FitResult fit(SegModel& model, const std::vector<SegSample>& train,
              const std::vector<SegSample>& val, const TrainConfig& cfg,
              const std::function<void(const StepRecord&)>& on_record = nullptr);

// Writes a registry-order snapshot back into the model.
void load_param_snapshot(ParamRegistry& reg, const std::vector<Tensor>& snapshot);

// Mean foreground Dice of the model's argmax prediction on one sample.
double sample_dice(const SegModel& model, const SegSample& sample);

// Argmax labels from class probabilities or logits [K,H,W,D].
LabelVolume labels_from_scores(const Tensor& scores,
                               const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

// Tiled inference: window origins at stride round-half-up(roi*(1-overlap))
// plus a final flush window per axis, per-window softmax, weight-normalized
// blending. Volumes smaller than the roi are zero-padded and cropped back.
// Output is [K,H,W,D] with columns summing to 1.
Tensor sliding_window_infer(const SegModel& model, const Tensor& volume,
                            const SlidingWindowConfig& cfg);

int64_t sliding_window_stride(int64_t roi, double overlap);

}  // namespace uvf
