#include "pretrain.hpp"

#include <cmath>
#include <sstream>

namespace uvf {

ReconDecoder::ReconDecoder(const EncoderConfig& enc, ParamRegistry& reg, Rng& rng,
                           const std::string& prefix) {
  const int64_t C = enc.embed_dim;
  bottleneck_ = CnnBlockParams::create(reg, prefix + ".bottleneck", 16 * C, C, rng);
  fuse8_ = CnnBlockParams::create(reg, prefix + ".fuse8", C + 4 * C, C / 2, rng);
  fuse2_ = CnnBlockParams::create(reg, prefix + ".fuse2", C / 2 + C, C / 2, rng);
  head_ = PointwiseParams::create(reg, prefix + ".head", C / 2, 1, rng);
}

Var ReconDecoder::decode(const SkipSet& skips) const {
  Var h = cnn_block(skips.features[5], bottleneck_);
  h = trilinear_upsample(h, 4);
  h = cnn_block(concat_channels({h, skips.features[3]}), fuse8_);
  h = trilinear_upsample(h, 4);
  h = cnn_block(concat_channels({h, skips.features[1]}), fuse2_);
  h = trilinear_upsample(h, 2);
  return pointwise(h, head_);
}

PretrainModel::PretrainModel(const EncoderConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  encoder_ = std::make_unique<SwinEncoder>(cfg_, reg_, rng, "encoder");
  decoder_ = std::make_unique<ReconDecoder>(cfg_, reg_, rng, "recon");
}

Var PretrainModel::recon_forward(const Var& masked_volume) const {
  return decoder_->decode(encoder_->encode(masked_volume));
}

double pretrain_step(PretrainModel& model, AdamW& opt, const Tensor& volume,
                     const MaskSpec& mask) {
  if (mask.masked_cubes.empty()) throw DomainError("pretrain_step: mask is empty");
  Tensor masked = apply_mask(volume, mask);
  Var pred = model.recon_forward(make_const(std::move(masked)));
  Var loss = masked_l1(pred, volume, mask);
  double value = loss->value[0];
  opt.zero_grads();
  backward(loss);
  opt.step();
  return value;
}

Tensor synth_intensity_volume(const std::array<int64_t, 3>& shape, uint64_t seed) {
  Tensor out({1, 1, shape[0], shape[1], shape[2]});
  Rng rng(seed);
  struct Blob {
    double cx, cy, cz, r, amp;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 4; ++i) {
    Blob b;
    b.cx = rng.uniform() * double(shape[0]);
    b.cy = rng.uniform() * double(shape[1]);
    b.cz = rng.uniform() * double(shape[2]);
    b.r = (0.12 + 0.18 * rng.uniform()) * double(shape[0]);
    b.amp = 0.5 + rng.uniform();
    blobs.push_back(b);
  }
  int64_t i = 0;
  for (int64_t x = 0; x < shape[0]; ++x)
    for (int64_t y = 0; y < shape[1]; ++y)
      for (int64_t z = 0; z < shape[2]; ++z, ++i) {
        double v = 0.0;
        for (const auto& b : blobs) {
          double dx = double(x) - b.cx, dy = double(y) - b.cy, dz = double(z) - b.cz;
          v += b.amp * std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * b.r * b.r));
        }
        out[i] = v - 0.5;
      }
  for (int64_t j = 0; j < out.numel(); ++j) out[j] += 0.1 * rng.gaussian();
  return out;
}

std::vector<SweepCell> ablation_sweep(const std::vector<double>& ratios,
                                      const std::vector<int64_t>& patch_sizes,
                                      const SweepConfig& cfg) {
  Tensor volume = synth_intensity_volume(cfg.vol_shape, cfg.seed);
  std::vector<SweepCell> cells;
  for (double r : ratios) {
    for (int64_t p : patch_sizes) {
      SweepCell cell;
      cell.ratio = r;
      cell.patch = p;
      cell.reference = std::abs(r - 0.4) < 1e-12 && p == 16;
      try {
        MaskSpec mask = generate_mask(cfg.vol_shape, p, r, cfg.seed);
        if (mask.masked_cubes.empty())
          throw DomainError("mask is empty at this ratio");
        PretrainModel model(cfg.encoder, cfg.seed);
        AdamWConfig oc;
        oc.lr = cfg.lr;
        AdamW opt(model.params(), oc);
        double loss = 0.0;
        for (int step = 0; step < cfg.steps; ++step)
          loss = pretrain_step(model, opt, volume, mask);
        cell.final_loss = loss;
      } catch (const std::exception& e) {
        cell.skipped = true;
        cell.note = e.what();
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "ratio,patch,final_loss,dice\n";
  for (const auto& c : cells) {
    if (c.skipped) continue;
    os << c.ratio << "," << c.patch << "," << c.final_loss << ",";
    if (c.has_dice) os << c.dice;
    os << "\n";
  }
  return os.str();
}

}  // namespace uvf
