#pragma once

#include <array>
#include <optional>

#include "blocks.hpp"

namespace uvf {

struct EncoderConfig {
  int64_t embed_dim = 96;              // C
  std::vector<int> depths = {2, 2, 2, 2};
  std::vector<int> num_heads = {3, 6, 12, 24};
  int window = 4;                      // M
  double mlp_ratio = 4.0;
  int token_size = 2;                  // fixed by the architecture
  bool qkv_bias = true;

  void validate() const;
  int64_t stage_width(int s) const { return embed_dim << s; }  // width of stage s blocks
  int64_t stem_width() const { return embed_dim / 2; }

  static EncoderConfig tiny() {
    EncoderConfig c;
    c.embed_dim = 8;
    c.depths = {1, 1, 1, 1};
    c.num_heads = {1, 2, 4, 8};
    c.window = 2;
    return c;
  }
};

// 3D lattice of C-channel tokens. values is [h*w*d, C] with h-major row
// ordering: row(x,y,z) = (x*w + y)*d + z.
struct TokenGrid {
  int64_t h = 0, w = 0, d = 0;
  int64_t channels = 0;
  Var values;

  int64_t tokens() const { return h * w * d; }
};

TokenGrid grid_from_volume(const Var& vol);       // [1,C,h,w,d] -> TokenGrid
Var volume_from_grid(const TokenGrid& g);         // TokenGrid -> [1,C,h,w,d]

struct PadRecord {
  int64_t h = 0, w = 0, d = 0;     // original token extents
  int64_t ph = 0, pw = 0, pd = 0;  // padded extents (multiples of M)
  int M = 0;
  int64_t windows() const { return (ph / M) * (pw / M) * (pd / M); }
  bool padded() const { return ph != h || pw != w || pd != d; }
};

// Pads the grid up to multiples of M (pad tokens are zero rows) and reorders
// tokens into [nW, M^3, C]. window_reverse is the exact inverse on the
// unpadded region.
std::pair<Var, PadRecord> window_partition(const TokenGrid& grid, int M);
TokenGrid window_reverse(const Var& windows, const PadRecord& rec, int64_t channels);

// out[(x-s) mod h, (y-s) mod w, (z-s) mod d] = in[x, y, z]
TokenGrid cyclic_shift(const TokenGrid& grid, int64_t s);
TokenGrid cyclic_shift(const TokenGrid& grid, int64_t sx, int64_t sy, int64_t sz);

// Relative position bias lookup indices: for intra-window positions t,u the
// entry t*T+u addresses row ((dx+M-1)(2M-1) + (dy+M-1))(2M-1) + (dz+M-1).
std::shared_ptr<const std::vector<int64_t>> relative_bias_index(int M);

// Additive attention mask [nW,T,T]: -1e9 where the key is a pad token or,
// for shifted windows, where query and key fall on opposite sides of a wrap
// boundary. Returns nullptr when no masking is needed.
std::shared_ptr<const Tensor> build_attn_mask(const PadRecord& rec, int64_t sh, int64_t sw,
                                              int64_t sd);

struct AttentionParams {
  Var wqkv, bqkv, wo, bo, bias_table;
  int num_heads = 1;
  static AttentionParams create(ParamRegistry& reg, const std::string& prefix, int64_t C,
                                int num_heads, int M, bool qkv_bias, Rng& rng);
};

// Single fused W-MSA over pre-partitioned windows.
Var window_attention_op(const Var& windows, const AttentionParams& p, int M,
                        std::shared_ptr<const Tensor> mask);

struct SwinBlockParams {
  Var ln1_g, ln1_b;
  AttentionParams attn;
  Var ln2_g, ln2_b;
  Var fc1_w, fc1_b, fc2_w, fc2_b;
  static SwinBlockParams create(ParamRegistry& reg, const std::string& prefix, int64_t C,
                                int num_heads, int M, double mlp_ratio, bool qkv_bias,
                                Rng& rng);
};

// z_hat = (S)W-MSA(LN(z)) + z ; z' = MLP(LN(z_hat)) + z_hat
// shifted=true cyclically shifts by floor(M/2) per axis (skipped on axes that
// fit inside one window) with wrap-boundary masking.
TokenGrid swin_block(const TokenGrid& grid, const SwinBlockParams& p, int M, bool shifted);

struct PatchMergeParams {
  Var ln_g, ln_b, w;
  static PatchMergeParams create(ParamRegistry& reg, const std::string& prefix, int64_t cin,
                                 Rng& rng);
};

// Concatenates 2x2x2 token groups (8C) in documented order, layer norm, then
// linear projection to 2C. Odd extents are edge-replicated.
TokenGrid patch_merge(const TokenGrid& grid, const PatchMergeParams& p);

// Five-resolution skip bundle plus bottleneck; features[i] is [1,Ci,H/2^i,...].
struct SkipSet {
  std::array<Var, 6> features;
};

class SwinEncoder {
 public:
  SwinEncoder(const EncoderConfig& cfg, ParamRegistry& reg, Rng& rng,
              const std::string& prefix = "encoder");

  const EncoderConfig& config() const { return cfg_; }

  // volume [1,1,H,W,D], H,W,D divisible by 32
  SkipSet encode(const Var& volume) const;

  // tokens at (H/2,W/2,D/2), 8 voxels per token linearly embedded to C
  TokenGrid patch_partition(const Var& volume) const;

  const std::vector<std::vector<SwinBlockParams>>& stages() const { return stages_; }

 private:
  EncoderConfig cfg_;
  Var embed_w_, embed_b_;
  CnnBlockParams stem_;
  std::vector<std::vector<SwinBlockParams>> stages_;
  std::vector<PatchMergeParams> merges_;
};

}  // namespace uvf
