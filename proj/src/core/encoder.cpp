#include "encoder.hpp"

namespace uvf {

void EncoderConfig::validate() const {
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw ConfigError("embed_dim must be a positive even number");
  if (token_size != 2) throw ConfigError("token_size is fixed at 2");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (depths.size() != 4 || num_heads.size() != 4)
    throw ConfigError("depths and num_heads must list 4 stages");
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
  for (int s = 0; s < 4; ++s) {
    if (depths[s] < 1) throw ConfigError("stage depth must be >= 1");
    if (num_heads[s] < 1 || stage_width(s) % num_heads[s] != 0)
      throw ConfigError("stage " + std::to_string(s) + " width " +
                        std::to_string(stage_width(s)) + " not divisible by " +
                        std::to_string(num_heads[s]) + " heads");
  }
}

TokenGrid grid_from_volume(const Var& vol) {
  const Shape& s = vol->value.shape();
  if (s.size() != 5 || s[0] != 1) throw ShapeError("grid_from_volume expects [1,C,h,w,d]");
  TokenGrid g;
  g.channels = s[1];
  g.h = s[2];
  g.w = s[3];
  g.d = s[4];
  // [C, T] -> [T, C]
  g.values = transpose2d(reshape(vol, {g.channels, g.tokens()}));
  return g;
}

Var volume_from_grid(const TokenGrid& g) {
  return reshape(transpose2d(g.values), {1, g.channels, g.h, g.w, g.d});
}

std::pair<Var, PadRecord> window_partition(const TokenGrid& grid, int M) {
  if (M < 1) throw ConfigError("window_partition: M must be >= 1");
  PadRecord rec;
  rec.h = grid.h; rec.w = grid.w; rec.d = grid.d;
  rec.M = M;
  auto pad_up = [M](int64_t e) { return ((e + M - 1) / M) * M; };
  rec.ph = pad_up(grid.h); rec.pw = pad_up(grid.w); rec.pd = pad_up(grid.d);
  int64_t T = int64_t(M) * M * M;
  int64_t nW = rec.windows();
  std::vector<int64_t> idx(static_cast<size_t>(nW * T));
  int64_t r = 0;
  for (int64_t wx = 0; wx < rec.ph / M; ++wx)
    for (int64_t wy = 0; wy < rec.pw / M; ++wy)
      for (int64_t wz = 0; wz < rec.pd / M; ++wz)
        for (int64_t ax = 0; ax < M; ++ax)
          for (int64_t ay = 0; ay < M; ++ay)
            for (int64_t az = 0; az < M; ++az) {
              int64_t x = wx * M + ax, y = wy * M + ay, z = wz * M + az;
              idx[r++] = (x < grid.h && y < grid.w && z < grid.d)
                             ? (x * grid.w + y) * grid.d + z
                             : -1;
            }
  Var flat = gather_rows(grid.values, std::move(idx));
  return {reshape(flat, {nW, T, grid.channels}), rec};
}

TokenGrid window_reverse(const Var& windows, const PadRecord& rec, int64_t channels) {
  int M = rec.M;
  int64_t T = int64_t(M) * M * M;
  int64_t nwy = rec.pw / M, nwz = rec.pd / M;
  std::vector<int64_t> idx(static_cast<size_t>(rec.h * rec.w * rec.d));
  int64_t r = 0;
  for (int64_t x = 0; x < rec.h; ++x)
    for (int64_t y = 0; y < rec.w; ++y)
      for (int64_t z = 0; z < rec.d; ++z) {
        int64_t win = ((x / M) * nwy + (y / M)) * nwz + (z / M);
        int64_t intra = ((x % M) * M + (y % M)) * M + (z % M);
        idx[r++] = win * T + intra;
      }
  Var flat = reshape(windows, {rec.windows() * T, channels});
  TokenGrid g;
  g.h = rec.h; g.w = rec.w; g.d = rec.d;
  g.channels = channels;
  g.values = gather_rows(flat, std::move(idx));
  return g;
}

TokenGrid cyclic_shift(const TokenGrid& grid, int64_t s) {
  return cyclic_shift(grid, s, s, s);
}

namespace {
int64_t mod(int64_t a, int64_t m) { return ((a % m) + m) % m; }
}  // namespace

TokenGrid cyclic_shift(const TokenGrid& grid, int64_t sx, int64_t sy, int64_t sz) {
  if (sx == 0 && sy == 0 && sz == 0) return grid;
  std::vector<int64_t> idx(static_cast<size_t>(grid.tokens()));
  int64_t r = 0;
  // out[x] = in[(x+s) mod n] so that in[x] lands at (x-s) mod n
  for (int64_t x = 0; x < grid.h; ++x)
    for (int64_t y = 0; y < grid.w; ++y)
      for (int64_t z = 0; z < grid.d; ++z)
        idx[r++] = (mod(x + sx, grid.h) * grid.w + mod(y + sy, grid.w)) * grid.d +
                   mod(z + sz, grid.d);
  TokenGrid g;
  g.h = grid.h; g.w = grid.w; g.d = grid.d;
  g.channels = grid.channels;
  g.values = gather_rows(grid.values, std::move(idx));
  return g;
}

std::shared_ptr<const std::vector<int64_t>> relative_bias_index(int M) {
  int64_t T = int64_t(M) * M * M;
  int64_t L = 2 * M - 1;
  auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(T * T));
  auto coord = [M](int64_t t) {
    return std::array<int64_t, 3>{t / (int64_t(M) * M), (t / M) % M, t % M};
  };
  for (int64_t t = 0; t < T; ++t) {
    auto a = coord(t);
    for (int64_t u = 0; u < T; ++u) {
      auto b = coord(u);
      int64_t dx = a[0] - b[0] + M - 1;
      int64_t dy = a[1] - b[1] + M - 1;
      int64_t dz = a[2] - b[2] + M - 1;
      (*idx)[static_cast<size_t>(t * T + u)] = (dx * L + dy) * L + dz;
    }
  }
  return idx;
}

std::shared_ptr<const Tensor> build_attn_mask(const PadRecord& rec, int64_t sh, int64_t sw,
                                              int64_t sd) {
  bool shifted = sh != 0 || sw != 0 || sd != 0;
  if (!rec.padded() && !shifted) return nullptr;
  int M = rec.M;
  int64_t T = int64_t(M) * M * M;
  int64_t nW = rec.windows();
  auto mask = std::make_shared<Tensor>(Shape{nW, T, T}, 0.0);
  // Per padded coordinate: -1 pad, else wrap-region id (tokens at positions
  // >= extent - shift came from the near edge of the unshifted grid).
  auto axis_info = [M](int64_t extent, int64_t pad_extent, int64_t shift,
                       std::vector<int>& region) {
    region.resize(static_cast<size_t>(pad_extent));
    for (int64_t x = 0; x < pad_extent; ++x) {
      if (x >= extent) region[x] = -1;
      else region[x] = (shift > 0 && x >= extent - shift) ? 1 : 0;
    }
  };
  std::vector<int> rx, ry, rz;
  axis_info(rec.h, rec.ph, sh, rx);
  axis_info(rec.w, rec.pw, sw, ry);
  axis_info(rec.d, rec.pd, sd, rz);
  int64_t r = 0;
  std::vector<int> win_region(static_cast<size_t>(T));
  for (int64_t wx = 0; wx < rec.ph / M; ++wx)
    for (int64_t wy = 0; wy < rec.pw / M; ++wy)
      for (int64_t wz = 0; wz < rec.pd / M; ++wz) {
        for (int64_t ax = 0; ax < M; ++ax)
          for (int64_t ay = 0; ay < M; ++ay)
            for (int64_t az = 0; az < M; ++az) {
              int a = rx[wx * M + ax], b = ry[wy * M + ay], c = rz[wz * M + az];
              int64_t intra = (ax * M + ay) * M + az;
              win_region[intra] = (a < 0 || b < 0 || c < 0) ? -1 : (a * 2 + b) * 2 + c;
            }
        double* mw = mask->data() + r * T * T;
        for (int64_t t = 0; t < T; ++t)
          for (int64_t u = 0; u < T; ++u)
            if (win_region[u] < 0 || (win_region[t] >= 0 && win_region[t] != win_region[u]))
              mw[t * T + u] = -1e9;
        ++r;
      }
  return mask;
}

AttentionParams AttentionParams::create(ParamRegistry& reg, const std::string& prefix,
                                        int64_t C, int num_heads, int M, bool qkv_bias,
                                        Rng& rng) {
  AttentionParams p;
  p.num_heads = num_heads;
  Tensor wqkv({C, 3 * C});
  rng.fill_trunc_normal(wqkv, 0.02);
  p.wqkv = reg.add(prefix + ".wqkv", std::move(wqkv));
  if (qkv_bias) p.bqkv = reg.add(prefix + ".bqkv", Tensor({3 * C}, 0.0));
  Tensor wo({C, C});
  rng.fill_trunc_normal(wo, 0.02);
  p.wo = reg.add(prefix + ".wo", std::move(wo));
  p.bo = reg.add(prefix + ".bo", Tensor({C}, 0.0));
  int64_t L = 2 * M - 1;
  p.bias_table = reg.add(prefix + ".bias_table", Tensor({L * L * L, num_heads}, 0.0));
  return p;
}

Var window_attention_op(const Var& windows, const AttentionParams& p, int M,
                        std::shared_ptr<const Tensor> mask) {
  return window_attention(windows, p.wqkv, p.bqkv, p.wo, p.bo, p.bias_table,
                          relative_bias_index(M), std::move(mask), p.num_heads);
}

SwinBlockParams SwinBlockParams::create(ParamRegistry& reg, const std::string& prefix,
                                        int64_t C, int num_heads, int M, double mlp_ratio,
                                        bool qkv_bias, Rng& rng) {
  SwinBlockParams p;
  p.ln1_g = reg.add(prefix + ".ln1.g", Tensor({C}, 1.0));
  p.ln1_b = reg.add(prefix + ".ln1.b", Tensor({C}, 0.0));
  p.attn = AttentionParams::create(reg, prefix + ".attn", C, num_heads, M, qkv_bias, rng);
  p.ln2_g = reg.add(prefix + ".ln2.g", Tensor({C}, 1.0));
  p.ln2_b = reg.add(prefix + ".ln2.b", Tensor({C}, 0.0));
  int64_t hidden = static_cast<int64_t>(double(C) * mlp_ratio);
  if (hidden < 1) throw ConfigError("mlp hidden width must be >= 1");
  Tensor fc1({C, hidden}), fc2({hidden, C});
  rng.fill_trunc_normal(fc1, 0.02);
  rng.fill_trunc_normal(fc2, 0.02);
  p.fc1_w = reg.add(prefix + ".mlp.fc1.w", std::move(fc1));
  p.fc1_b = reg.add(prefix + ".mlp.fc1.b", Tensor({hidden}, 0.0));
  p.fc2_w = reg.add(prefix + ".mlp.fc2.w", std::move(fc2));
  p.fc2_b = reg.add(prefix + ".mlp.fc2.b", Tensor({C}, 0.0));
  return p;
}

TokenGrid swin_block(const TokenGrid& grid, const SwinBlockParams& p, int M, bool shifted) {
  // Per-axis shift; axes spanned by a single window are not shifted so a
  // one-window grid behaves identically with and without shifting.
  int64_t sh = 0, sw = 0, sd = 0;
  if (shifted) {
    sh = grid.h > M ? M / 2 : 0;
    sw = grid.w > M ? M / 2 : 0;
    sd = grid.d > M ? M / 2 : 0;
  }
  TokenGrid normed = grid;
  normed.values = layer_norm(grid.values, p.ln1_g, p.ln1_b, kNormEps);
  TokenGrid shifted_grid = cyclic_shift(normed, sh, sw, sd);
  auto [windows, rec] = window_partition(shifted_grid, M);
  auto mask = build_attn_mask(rec, sh, sw, sd);
  Var attn = window_attention_op(windows, p.attn, M, mask);
  TokenGrid merged = window_reverse(attn, rec, grid.channels);
  merged = cyclic_shift(merged, -sh, -sw, -sd);
  Var z_hat = add(merged.values, grid.values);
  // MLP branch
  Var h = layer_norm(z_hat, p.ln2_g, p.ln2_b, kNormEps);
  h = linear(h, p.fc1_w, p.fc1_b);
  h = gelu(h);
  h = linear(h, p.fc2_w, p.fc2_b);
  TokenGrid out = grid;
  out.values = add(h, z_hat);
  return out;
}

PatchMergeParams PatchMergeParams::create(ParamRegistry& reg, const std::string& prefix,
                                          int64_t cin, Rng& rng) {
  PatchMergeParams p;
  p.ln_g = reg.add(prefix + ".ln.g", Tensor({8 * cin}, 1.0));
  p.ln_b = reg.add(prefix + ".ln.b", Tensor({8 * cin}, 0.0));
  Tensor w({8 * cin, 2 * cin});
  rng.fill_trunc_normal(w, 0.02);
  p.w = reg.add(prefix + ".w", std::move(w));
  return p;
}

TokenGrid patch_merge(const TokenGrid& grid, const PatchMergeParams& p) {
  if (grid.h < 2 || grid.w < 2 || grid.d < 2)
    throw ShapeError("patch_merge: all token extents must be >= 2");
  int64_t oh = (grid.h + 1) / 2, ow = (grid.w + 1) / 2, od = (grid.d + 1) / 2;
  std::vector<int64_t> idx(static_cast<size_t>(oh * ow * od * 8));
  int64_t r = 0;
  // Neighbor order (a,b,c) in {0,1}^3, a-major; odd extents replicate edges.
  for (int64_t tx = 0; tx < oh; ++tx)
    for (int64_t ty = 0; ty < ow; ++ty)
      for (int64_t tz = 0; tz < od; ++tz)
        for (int64_t a = 0; a < 2; ++a)
          for (int64_t b = 0; b < 2; ++b)
            for (int64_t c = 0; c < 2; ++c) {
              int64_t x = std::min(2 * tx + a, grid.h - 1);
              int64_t y = std::min(2 * ty + b, grid.w - 1);
              int64_t z = std::min(2 * tz + c, grid.d - 1);
              idx[r++] = (x * grid.w + y) * grid.d + z;
            }
  Var grouped = gather_rows(grid.values, std::move(idx));
  Var cat = reshape(grouped, {oh * ow * od, 8 * grid.channels});
  Var normed = layer_norm(cat, p.ln_g, p.ln_b, kNormEps);
  TokenGrid g;
  g.h = oh; g.w = ow; g.d = od;
  g.channels = 2 * grid.channels;
  g.values = matmul(normed, p.w);
  return g;
}

SwinEncoder::SwinEncoder(const EncoderConfig& cfg, ParamRegistry& reg, Rng& rng,
                         const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  int64_t C = cfg_.embed_dim;
  Tensor ew({8, C});
  rng.fill_trunc_normal(ew, 0.02);
  embed_w_ = reg.add(prefix + ".embed.w", std::move(ew));
  embed_b_ = reg.add(prefix + ".embed.b", Tensor({C}, 0.0));
  stem_ = CnnBlockParams::create(reg, prefix + ".stem", 1, cfg_.stem_width(), rng);
  for (int s = 0; s < 4; ++s) {
    std::vector<SwinBlockParams> blocks;
    for (int j = 0; j < cfg_.depths[s]; ++j)
      blocks.push_back(SwinBlockParams::create(
          reg, prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(j),
          cfg_.stage_width(s), cfg_.num_heads[s], cfg_.window, cfg_.mlp_ratio,
          cfg_.qkv_bias, rng));
    stages_.push_back(std::move(blocks));
    merges_.push_back(PatchMergeParams::create(
        reg, prefix + ".merge" + std::to_string(s + 1), cfg_.stage_width(s), rng));
  }
}

TokenGrid SwinEncoder::patch_partition(const Var& volume) const {
  const Shape& s = volume->value.shape();
  if (s.size() != 5 || s[0] != 1 || s[1] != 1)
    throw ShapeError("patch_partition expects [1,1,H,W,D], got " + shape_str(s));
  int64_t H = s[2], W = s[3], D = s[4];
  if (H % 2 || W % 2 || D % 2)
    throw ShapeError("patch_partition: extents must be even, got " + shape_str(s));
  int64_t h = H / 2, w = W / 2, d = D / 2;
  std::vector<int64_t> idx(static_cast<size_t>(h * w * d * 8));
  int64_t r = 0;
  for (int64_t tx = 0; tx < h; ++tx)
    for (int64_t ty = 0; ty < w; ++ty)
      for (int64_t tz = 0; tz < d; ++tz)
        for (int64_t a = 0; a < 2; ++a)
          for (int64_t b = 0; b < 2; ++b)
            for (int64_t c = 0; c < 2; ++c)
              idx[r++] = ((2 * tx + a) * W + 2 * ty + b) * D + 2 * tz + c;
  Var flat = reshape(volume, {H * W * D, 1});
  Var raw = reshape(gather_rows(flat, std::move(idx)), {h * w * d, 8});
  TokenGrid g;
  g.h = h; g.w = w; g.d = d;
  g.channels = cfg_.embed_dim;
  g.values = linear(raw, embed_w_, embed_b_);
  return g;
}

SkipSet SwinEncoder::encode(const Var& volume) const {
  const Shape& s = volume->value.shape();
  if (s.size() != 5 || s[0] != 1 || s[1] != 1)
    throw ShapeError("encode expects [1,1,H,W,D]");
  for (int a = 2; a < 5; ++a)
    if (s[a] % 32 != 0)
      throw ShapeError("encode: input extents must be divisible by 32; pad the volume "
                       "(got " + shape_str(s) + ")");
  SkipSet out;
  out.features[0] = cnn_block(volume, stem_);
  TokenGrid grid = patch_partition(volume);
  out.features[1] = volume_from_grid(grid);
  for (int st = 0; st < 4; ++st) {
    for (size_t j = 0; j < stages_[st].size(); ++j)
      grid = swin_block(grid, stages_[st][j], cfg_.window, j % 2 == 1);
    grid = patch_merge(grid, merges_[st]);
    out.features[st + 2] = volume_from_grid(grid);
  }
  return out;
}

}  // namespace uvf
