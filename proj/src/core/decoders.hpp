#pragma once

#include "encoder.hpp"

namespace uvf {

enum class DecoderVariant { cnn, transformer };

struct DecoderConfig {
  DecoderVariant variant = DecoderVariant::cnn;
  int64_t num_classes = 2;  // K
  bool deep_supervision = true;
  // The layer projection's MLP line carries no residual by default; this
  // flag enables the residual variant for comparison.
  bool residual_mlp = false;

  void validate() const {
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  }
};

struct DecoderOutputs {
  Var logits_full;           // [1,K,H,W,D]
  Var aux1, aux2;            // full resolution, present iff deep supervision
};

// 1x1x1 convolution head producing K channels.
Var seg_head(const Var& features, const PointwiseParams& p);

class CnnDecoder {
 public:
  CnnDecoder(const EncoderConfig& enc, const DecoderConfig& cfg, ParamRegistry& reg,
             Rng& rng, const std::string& prefix = "decoder");
  DecoderOutputs decode(const SkipSet& skips) const;
  const DecoderConfig& config() const { return cfg_; }

  // Fusion output widths for decoder levels 4..0 plus the bottleneck width.
  static std::vector<int64_t> fusion_widths(const EncoderConfig& enc);
  static int64_t bottleneck_width(const EncoderConfig& enc) { return 2 * enc.embed_dim; }

 private:
  DecoderConfig cfg_;
  CnnBlockParams bottleneck_;
  std::vector<DeconvParams> deconvs_;   // level 4..0
  std::vector<CnnBlockParams> fusions_; // level 4..0
  PointwiseParams head_, aux1_head_, aux2_head_;
};

class TransformerDecoder {
 public:
  TransformerDecoder(const EncoderConfig& enc, const DecoderConfig& cfg, ParamRegistry& reg,
                     Rng& rng, const std::string& prefix = "decoder");
  DecoderOutputs decode(const SkipSet& skips) const;
  const DecoderConfig& config() const { return cfg_; }

  static int heads_for_width(const EncoderConfig& enc, int64_t width);

 private:
  // Layer projection: w = MLP(LN(w)); w' = W-MSA(LN(w)) + w
  struct LayerProj {
    Var ln1_g, ln1_b, fc1_w, fc1_b, fc2_w, fc2_b;
    Var ln2_g, ln2_b;
    AttentionParams attn;
  };
  LayerProj make_proj(ParamRegistry& reg, const std::string& prefix, int64_t C, int heads,
                      Rng& rng) const;
  TokenGrid apply_proj(const TokenGrid& g, const LayerProj& p) const;

  EncoderConfig enc_;
  DecoderConfig cfg_;
  std::vector<SwinBlockParams> bottleneck_;       // two swin layers at 16C
  std::vector<Var> reduce_w_, reduce_b_;          // per level 4..0
  std::vector<LayerProj> projs_;                  // per level 4..0
  PointwiseParams head_, aux1_head_, aux2_head_;
};

// Segmentation model: encoder plus one decoder variant behind one forward().
class SegModel {
 public:
  SegModel(const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg, uint64_t seed);

  DecoderOutputs forward(const Var& volume) const;
  SkipSet encode(const Var& volume) const { return encoder_->encode(volume); }

  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  const EncoderConfig& encoder_config() const { return enc_cfg_; }
  const DecoderConfig& decoder_config() const { return dec_cfg_; }
  int64_t count_parameters() const { return reg_.total_count(); }

 private:
  EncoderConfig enc_cfg_;
  DecoderConfig dec_cfg_;
  ParamRegistry reg_;
  std::unique_ptr<SwinEncoder> encoder_;
  std::unique_ptr<CnnDecoder> cnn_dec_;
  std::unique_ptr<TransformerDecoder> tr_dec_;
};

}  // namespace uvf
