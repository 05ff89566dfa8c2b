#include "decoders.hpp"

namespace uvf {

Var seg_head(const Var& features, const PointwiseParams& p) {
  return pointwise(features, p);
}

namespace {
void require_skips(const SkipSet& s) {
  for (int i = 0; i < 6; ++i)
    if (!s.features[i])
      throw ContractError("decoder: missing skip level " + std::to_string(i));
}

// 1x1x1 heads commute with trilinear upsampling (both are linear), so aux
// taps apply the head at the tap resolution and upsample K channels.
Var aux_output(const Var& feature, const PointwiseParams& head, int factor) {
  return trilinear_upsample(seg_head(feature, head), factor);
}
}  // namespace

// ---------------------------------------------------------------------------
// CnnDecoder
// ---------------------------------------------------------------------------

std::vector<int64_t> CnnDecoder::fusion_widths(const EncoderConfig& enc) {
  int64_t C = enc.embed_dim;
  // levels 4..0
  return {4 * C, 2 * C, C, C, enc.stem_width()};
}

CnnDecoder::CnnDecoder(const EncoderConfig& enc, const DecoderConfig& cfg,
                       ParamRegistry& reg, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  int64_t C = enc.embed_dim;
  bottleneck_ = CnnBlockParams::create(reg, prefix + ".bottleneck", 16 * C,
                                       bottleneck_width(enc), rng);
  std::vector<int64_t> skipw = {8 * C, 4 * C, 2 * C, C, enc.stem_width()};
  std::vector<int64_t> fuse = fusion_widths(enc);
  int64_t prev = bottleneck_width(enc);
  for (int lvl = 0; lvl < 5; ++lvl) {
    int64_t dec_out = std::min(prev, fuse[lvl]);
    std::string lp = prefix + ".level" + std::to_string(4 - lvl);
    deconvs_.push_back(DeconvParams::create(reg, lp + ".deconv", prev, dec_out, rng));
    fusions_.push_back(
        CnnBlockParams::create(reg, lp + ".fuse", dec_out + skipw[lvl], fuse[lvl], rng));
    prev = fuse[lvl];
  }
  head_ = PointwiseParams::create(reg, prefix + ".head", fuse[4], cfg_.num_classes, rng);
  if (cfg_.deep_supervision) {
    aux1_head_ =
        PointwiseParams::create(reg, prefix + ".aux1_head", fuse[3], cfg_.num_classes, rng);
    aux2_head_ =
        PointwiseParams::create(reg, prefix + ".aux2_head", fuse[2], cfg_.num_classes, rng);
  }
}

DecoderOutputs CnnDecoder::decode(const SkipSet& skips) const {
  require_skips(skips);
  Var x = cnn_block(skips.features[5], bottleneck_);
  DecoderOutputs out;
  for (int lvl = 0; lvl < 5; ++lvl) {
    x = deconv(x, deconvs_[lvl]);
    x = concat_channels({x, skips.features[4 - lvl]});
    x = cnn_block(x, fusions_[lvl]);
    if (cfg_.deep_supervision) {
      if (4 - lvl == 2) out.aux2 = aux_output(x, aux2_head_, 4);
      if (4 - lvl == 1) out.aux1 = aux_output(x, aux1_head_, 2);
    }
  }
  out.logits_full = seg_head(x, head_);
  return out;
}

// ---------------------------------------------------------------------------
// TransformerDecoder
// ---------------------------------------------------------------------------

int TransformerDecoder::heads_for_width(const EncoderConfig& enc, int64_t width) {
  int64_t d0 = enc.embed_dim / enc.num_heads[0];
  int64_t cap = enc.num_heads[3];
  int64_t h = std::clamp<int64_t>(width / d0, 1, cap);
  while (h > 1 && width % h != 0) --h;
  return static_cast<int>(h);
}

TransformerDecoder::LayerProj TransformerDecoder::make_proj(ParamRegistry& reg,
                                                            const std::string& prefix,
                                                            int64_t C, int heads,
                                                            Rng& rng) const {
  LayerProj p;
  p.ln1_g = reg.add(prefix + ".ln1.g", Tensor({C}, 1.0));
  p.ln1_b = reg.add(prefix + ".ln1.b", Tensor({C}, 0.0));
  int64_t hidden = static_cast<int64_t>(double(C) * enc_.mlp_ratio);
  Tensor fc1({C, hidden}), fc2({hidden, C});
  rng.fill_trunc_normal(fc1, 0.02);
  rng.fill_trunc_normal(fc2, 0.02);
  p.fc1_w = reg.add(prefix + ".mlp.fc1.w", std::move(fc1));
  p.fc1_b = reg.add(prefix + ".mlp.fc1.b", Tensor({hidden}, 0.0));
  p.fc2_w = reg.add(prefix + ".mlp.fc2.w", std::move(fc2));
  p.fc2_b = reg.add(prefix + ".mlp.fc2.b", Tensor({C}, 0.0));
  p.ln2_g = reg.add(prefix + ".ln2.g", Tensor({C}, 1.0));
  p.ln2_b = reg.add(prefix + ".ln2.b", Tensor({C}, 0.0));
  p.attn = AttentionParams::create(reg, prefix + ".attn", C, heads, enc_.window,
                                   enc_.qkv_bias, rng);
  return p;
}

TokenGrid TransformerDecoder::apply_proj(const TokenGrid& g, const LayerProj& p) const {
  // w = MLP(LN(w)) -- no residual in the printed form
  Var h = layer_norm(g.values, p.ln1_g, p.ln1_b, kNormEps);
  h = linear(h, p.fc1_w, p.fc1_b);
  h = gelu(h);
  h = linear(h, p.fc2_w, p.fc2_b);
  if (cfg_.residual_mlp) h = add(h, g.values);
  TokenGrid w = g;
  w.values = h;
  // w' = W-MSA(LN(w)) + w
  TokenGrid normed = w;
  normed.values = layer_norm(w.values, p.ln2_g, p.ln2_b, kNormEps);
  auto [windows, rec] = window_partition(normed, enc_.window);
  auto mask = build_attn_mask(rec, 0, 0, 0);
  Var attn = window_attention_op(windows, p.attn, enc_.window, mask);
  TokenGrid merged = window_reverse(attn, rec, g.channels);
  TokenGrid out = g;
  out.values = add(merged.values, w.values);
  return out;
}

TransformerDecoder::TransformerDecoder(const EncoderConfig& enc, const DecoderConfig& cfg,
                                       ParamRegistry& reg, Rng& rng,
                                       const std::string& prefix)
    : enc_(enc), cfg_(cfg) {
  cfg_.validate();
  int64_t C = enc.embed_dim;
  for (int j = 0; j < 2; ++j)
    bottleneck_.push_back(SwinBlockParams::create(
        reg, prefix + ".bottleneck.block" + std::to_string(j), 16 * C,
        heads_for_width(enc, 16 * C), enc.window, enc.mlp_ratio, enc.qkv_bias, rng));
  std::vector<int64_t> skipw = {8 * C, 4 * C, 2 * C, C, enc.stem_width()};
  int64_t prev = 16 * C;
  for (int lvl = 0; lvl < 5; ++lvl) {
    int64_t out_w = skipw[lvl];
    std::string lp = prefix + ".level" + std::to_string(4 - lvl);
    Tensor rw({prev + skipw[lvl], out_w});
    rng.fill_trunc_normal(rw, 0.02);
    reduce_w_.push_back(reg.add(lp + ".reduce.w", std::move(rw)));
    reduce_b_.push_back(reg.add(lp + ".reduce.b", Tensor({out_w}, 0.0)));
    projs_.push_back(
        make_proj(reg, lp + ".proj", out_w, heads_for_width(enc, out_w), rng));
    prev = out_w;
  }
  head_ = PointwiseParams::create(reg, prefix + ".head", enc.stem_width(),
                                  cfg_.num_classes, rng);
  if (cfg_.deep_supervision) {
    aux1_head_ =
        PointwiseParams::create(reg, prefix + ".aux1_head", C, cfg_.num_classes, rng);
    aux2_head_ =
        PointwiseParams::create(reg, prefix + ".aux2_head", 2 * C, cfg_.num_classes, rng);
  }
}

DecoderOutputs TransformerDecoder::decode(const SkipSet& skips) const {
  require_skips(skips);
  TokenGrid grid = grid_from_volume(skips.features[5]);
  for (size_t j = 0; j < bottleneck_.size(); ++j)
    grid = swin_block(grid, bottleneck_[j], enc_.window, j % 2 == 1);
  Var x = volume_from_grid(grid);
  DecoderOutputs out;
  for (int lvl = 0; lvl < 5; ++lvl) {
    x = trilinear_upsample(x, 2);
    x = concat_channels({x, skips.features[4 - lvl]});
    TokenGrid g = grid_from_volume(x);
    g.values = linear(g.values, reduce_w_[lvl], reduce_b_[lvl]);
    g.channels = reduce_w_[lvl]->value.cols();
    g = apply_proj(g, projs_[lvl]);
    x = volume_from_grid(g);
    if (cfg_.deep_supervision) {
      if (4 - lvl == 2) out.aux2 = aux_output(x, aux2_head_, 4);
      if (4 - lvl == 1) out.aux1 = aux_output(x, aux1_head_, 2);
    }
  }
  out.logits_full = seg_head(x, head_);
  return out;
}

// ---------------------------------------------------------------------------
// SegModel
// ---------------------------------------------------------------------------

SegModel::SegModel(const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
                   uint64_t seed)
    : enc_cfg_(enc_cfg), dec_cfg_(dec_cfg) {
  Rng rng(seed);
  encoder_ = std::make_unique<SwinEncoder>(enc_cfg_, reg_, rng);
  if (dec_cfg_.variant == DecoderVariant::cnn)
    cnn_dec_ = std::make_unique<CnnDecoder>(enc_cfg_, dec_cfg_, reg_, rng);
  else
    tr_dec_ = std::make_unique<TransformerDecoder>(enc_cfg_, dec_cfg_, reg_, rng);
}

DecoderOutputs SegModel::forward(const Var& volume) const {
  SkipSet skips = encoder_->encode(volume);
  return cnn_dec_ ? cnn_dec_->decode(skips) : tr_dec_->decode(skips);
}

}  // namespace uvf
