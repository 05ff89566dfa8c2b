#include "runtime.hpp"

#include <algorithm>
#include <cmath>

namespace uvf {

namespace {

struct VoxelField {
  std::array<int64_t, 3> dims;
  const Tensor* image;
  const LabelVolume* label;
};

int64_t flat(const std::array<int64_t, 3>& dims, int64_t x, int64_t y, int64_t z) {
  return (x * dims[1] + y) * dims[2] + z;
}

// out(x) = in(x with axis a reversed)
SegSample flip_axis(const SegSample& s, int a) {
  SegSample out;
  out.label.dims = s.label.dims;
  out.label.spacing = s.label.spacing;
  out.label.data.resize(s.label.data.size());
  out.image = Tensor(s.image.shape());
  const auto& d = s.label.dims;
  for (int64_t x = 0; x < d[0]; ++x)
    for (int64_t y = 0; y < d[1]; ++y)
      for (int64_t z = 0; z < d[2]; ++z) {
        std::array<int64_t, 3> src{x, y, z};
        src[a] = d[a] - 1 - src[a];
        int64_t i = flat(d, x, y, z);
        int64_t j = flat(d, src[0], src[1], src[2]);
        out.image[i] = s.image[j];
        out.label.data[size_t(i)] = s.label.data[size_t(j)];
      }
  return out;
}

// One 90-degree rotation in the (a,b) plane: output extent of a is the input
// extent of b and vice versa; out(xa, xb) = in(xb, Da_in - 1 - xa).
SegSample rotate90_once(const SegSample& s, int a, int b) {
  const auto& din = s.label.dims;
  std::array<int64_t, 3> dout = din;
  dout[a] = din[b];
  dout[b] = din[a];
  SegSample out;
  out.label.dims = dout;
  out.label.spacing = s.label.spacing;
  std::swap(out.label.spacing[a], out.label.spacing[b]);
  out.label.data.resize(s.label.data.size());
  out.image = Tensor({1, 1, dout[0], dout[1], dout[2]});
  for (int64_t x = 0; x < dout[0]; ++x)
    for (int64_t y = 0; y < dout[1]; ++y)
      for (int64_t z = 0; z < dout[2]; ++z) {
        std::array<int64_t, 3> o{x, y, z};
        std::array<int64_t, 3> src = o;
        src[a] = o[b];
        src[b] = din[b] - 1 - o[a];
        int64_t i = flat(dout, x, y, z);
        int64_t j = flat(din, src[0], src[1], src[2]);
        out.image[i] = s.image[j];
        out.label.data[size_t(i)] = s.label.data[size_t(j)];
      }
  return out;
}

}  // namespace

SegSample augment(const SegSample& sample, const AugmentFlags& flags, Rng& rng) {
  SegSample out = sample;
  if (flags.flip) {
    for (int a = 0; a < 3; ++a)
      if (rng.uniform() < 0.5) out = flip_axis(out, a);
  }
  if (flags.rotate90) {
    static constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    int p = int(rng.bounded(3));
    int k = int(rng.bounded(4));
    for (int i = 0; i < k; ++i) out = rotate90_once(out, pairs[p][0], pairs[p][1]);
  }
  if (flags.intensity_scale) {
    double s = 0.9 + 0.2 * rng.uniform();
    for (int64_t i = 0; i < out.image.numel(); ++i) out.image[i] *= s;
  }
  if (flags.intensity_shift) {
    double t = -0.1 + 0.2 * rng.uniform();
    for (int64_t i = 0; i < out.image.numel(); ++i) out.image[i] += t;
  }
  return out;
}

std::vector<SegSample> synth_dataset(int64_t n, const std::array<int64_t, 3>& vol_size,
                                     int64_t K, uint64_t seed, double contrast,
                                     double noise_sigma) {
  if (n < 1) throw ConfigError("synth_dataset: n must be >= 1");
  if (K < 2) throw ConfigError("synth_dataset: K must be >= 2");
  for (int64_t e : vol_size)
    if (e % 32 != 0) throw ShapeError("synth_dataset: extents must be divisible by 32");
  Rng rng(seed);
  std::vector<SegSample> out;
  for (int64_t s = 0; s < n; ++s) {
    SegSample sample;
    sample.label.dims = vol_size;
    sample.label.data.assign(size_t(vol_size[0] * vol_size[1] * vol_size[2]), 0);
    sample.image = Tensor({1, 1, vol_size[0], vol_size[1], vol_size[2]});

    struct Ellipsoid {
      std::array<double, 3> c, r;
    };
    std::vector<Ellipsoid> shapes;  // shapes[c-1] paints class c
    Ellipsoid organ;
    for (int a = 0; a < 3; ++a) {
      organ.c[a] = (0.35 + 0.3 * rng.uniform()) * double(vol_size[a]);
      organ.r[a] = (0.2 + 0.12 * rng.uniform()) * double(vol_size[a]);
    }
    shapes.push_back(organ);
    for (int64_t c = 2; c < K; ++c) {
      Ellipsoid t;
      for (int a = 0; a < 3; ++a) {
        t.r[a] = (0.45 + 0.2 * rng.uniform()) * organ.r[a];
        t.c[a] = organ.c[a] + (rng.uniform() - 0.5) * (organ.r[a] - t.r[a]);
      }
      shapes.push_back(t);
    }

    int64_t i = 0;
    for (int64_t x = 0; x < vol_size[0]; ++x)
      for (int64_t y = 0; y < vol_size[1]; ++y)
        for (int64_t z = 0; z < vol_size[2]; ++z, ++i) {
          uint16_t label = 0;
          for (size_t k = 0; k < shapes.size(); ++k) {
            const auto& e = shapes[k];
            double dx = (double(x) - e.c[0]) / e.r[0];
            double dy = (double(y) - e.c[1]) / e.r[1];
            double dz = (double(z) - e.c[2]) / e.r[2];
            if (dx * dx + dy * dy + dz * dz <= 1.0) label = uint16_t(k + 1);
          }
          sample.label.data[size_t(i)] = label;
          sample.image[i] = contrast * double(label) - 0.25;
        }
    for (int64_t j = 0; j < sample.image.numel(); ++j)
      sample.image[j] += noise_sigma * rng.gaussian();
    out.push_back(std::move(sample));
  }
  return out;
}

LabelVolume labels_from_scores(const Tensor& scores, const std::array<double, 3>& spacing) {
  Shape s = scores.shape();
  if (s.size() == 5 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 4) throw ShapeError("labels_from_scores: expected [K,H,W,D]");
  int64_t K = s[0];
  int64_t N = s[1] * s[2] * s[3];
  LabelVolume out;
  out.dims = {s[1], s[2], s[3]};
  out.spacing = spacing;
  out.data.resize(size_t(N));
  for (int64_t v = 0; v < N; ++v) {
    int64_t best = 0;
    double bv = scores[v];
    for (int64_t k = 1; k < K; ++k) {
      double val = scores[k * N + v];
      if (val > bv) {
        bv = val;
        best = k;
      }
    }
    out.data[size_t(v)] = uint16_t(best);
  }
  return out;
}

double sample_dice(const SegModel& model, const SegSample& sample) {
  NoGradGuard ng;
  DecoderOutputs outs = model.forward(make_const(sample.image));
  LabelVolume pred = labels_from_scores(outs.logits_full->value, sample.label.spacing);
  int K = int(model.decoder_config().num_classes);
  return evaluate_labels(pred, sample.label, K).mean_dice;
}

void load_param_snapshot(ParamRegistry& reg, const std::vector<Tensor>& snapshot) {
  const auto& items = reg.items();
  if (snapshot.size() != items.size())
    throw ContractError("param snapshot size does not match registry");
  for (size_t i = 0; i < items.size(); ++i) {
    if (!items[i].second->value.same_shape(snapshot[i]))
      throw ShapeError("param snapshot shape mismatch at " + items[i].first);
    items[i].second->value = snapshot[i];
  }
}

FitResult fit(SegModel& model, const std::vector<SegSample>& train,
              const std::vector<SegSample>& val, const TrainConfig& cfg,
              const std::function<void(const StepRecord&)>& on_record) {
  cfg.validate();
  if (train.empty()) throw ConfigError("fit: training set is empty");
  const std::vector<SegSample>& val_set = val.empty() ? train : val;
  int64_t total_steps = cfg.epochs * int64_t(train.size());
  if (cfg.warmup_steps >= total_steps)
    throw ConfigError("fit: warmup_steps must be < total steps");

  AdamWConfig oc;
  oc.lr = cfg.lr;
  AdamW opt(model.params(), oc);
  Rng rng(cfg.seed);

  FitResult result;
  auto validate_now = [&]() {
    double acc = 0.0;
    for (const auto& s : val_set) acc += sample_dice(model, s);
    return acc / double(val_set.size());
  };
  auto snapshot = [&]() {
    std::vector<Tensor> snap;
    for (const auto& [_, v] : model.params().items()) snap.push_back(v->value);
    return snap;
  };

  std::vector<size_t> order(train.size());
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(rng.bounded(uint64_t(i)))]);
    for (size_t idx : order) {
      const SegSample& raw = train[idx];
      SegSample s = cfg.augment.any() ? augment(raw, cfg.augment, rng) : raw;
      Tensor onehot = onehot_from_labels(s.label.data, model.decoder_config().num_classes);

      opt.set_lr(lr_at(step, cfg.warmup_steps, total_steps, cfg.lr));
      DecoderOutputs outs = model.forward(make_const(s.image));
      Var loss = model.decoder_config().deep_supervision
                     ? deep_supervision_loss(outs, onehot, cfg.weights, cfg.smooth)
                     : dice_ce_from_logits(outs.logits_full, onehot, cfg.smooth);
      double lv = loss->value[0];
      if (!std::isfinite(lv))
        throw DomainError("fit: non-finite loss at step " + std::to_string(step));
      opt.zero_grads();
      backward(loss);
      opt.step();

      StepRecord rec;
      rec.step = step;
      rec.lr = opt.lr();
      rec.loss = lv;
      bool last = step == total_steps - 1;
      if ((cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) || last) {
        double d = validate_now();
        rec.val_dice = d;
        if (d > result.best_val_dice) {
          result.best_val_dice = d;
          result.best_step = step;
          result.best_params = snapshot();
        }
      }
      if (on_record) on_record(rec);
      result.log.push_back(std::move(rec));
      ++step;
    }
  }
  if (result.best_step < 0) {
    result.best_val_dice = validate_now();
    result.best_step = total_steps - 1;
    result.best_params = snapshot();
  }
  return result;
}

int64_t sliding_window_stride(int64_t roi, double overlap) {
  int64_t s = int64_t(std::floor(double(roi) * (1.0 - overlap) + 0.5));
  return std::max<int64_t>(1, s);
}

Tensor sliding_window_infer(const SegModel& model, const Tensor& volume,
                            const SlidingWindowConfig& cfg) {
  cfg.validate();
  const Shape& vs = volume.shape();
  if (vs.size() != 5 || vs[0] != 1 || vs[1] != 1)
    throw ShapeError("sliding_window_infer: expected volume [1,1,H,W,D]");
  std::array<int64_t, 3> dims{vs[2], vs[3], vs[4]};
  std::array<int64_t, 3> pad;  // working extents, >= roi per axis
  for (int a = 0; a < 3; ++a) pad[a] = std::max(dims[a], cfg.roi[a]);

  auto origins_for = [&](int a) {
    std::vector<int64_t> xs;
    int64_t s = sliding_window_stride(cfg.roi[a], cfg.overlap);
    for (int64_t x = 0;; x += s) {
      if (x + cfg.roi[a] >= pad[a]) {
        xs.push_back(pad[a] - cfg.roi[a]);
        break;
      }
      xs.push_back(x);
    }
    return xs;
  };
  auto ox = origins_for(0), oy = origins_for(1), oz = origins_for(2);

  auto axis_weight = [&](int a) {
    std::vector<double> w(size_t(cfg.roi[a]), 1.0);
    if (cfg.blend.kind == SlidingWindowBlend::gaussian) {
      double c = double(cfg.roi[a] - 1) / 2.0;
      double sigma = double(cfg.roi[a]) / 8.0;
      for (int64_t i = 0; i < cfg.roi[a]; ++i)
        w[size_t(i)] = std::exp(-(double(i) - c) * (double(i) - c) / (2.0 * sigma * sigma));
    }
    return w;
  };
  auto wx = axis_weight(0), wy = axis_weight(1), wz = axis_weight(2);

  int64_t K = model.decoder_config().num_classes;
  int64_t N = dims[0] * dims[1] * dims[2];
  Tensor acc({K, dims[0], dims[1], dims[2]}, 0.0);
  std::vector<double> wsum(size_t(N), 0.0);

  NoGradGuard ng;
  Tensor win({1, 1, cfg.roi[0], cfg.roi[1], cfg.roi[2]});
  for (int64_t x0 : ox)
    for (int64_t y0 : oy)
      for (int64_t z0 : oz) {
        win.fill(0.0);
        int64_t wi = 0;
        for (int64_t x = 0; x < cfg.roi[0]; ++x)
          for (int64_t y = 0; y < cfg.roi[1]; ++y)
            for (int64_t z = 0; z < cfg.roi[2]; ++z, ++wi) {
              int64_t gx = x0 + x, gy = y0 + y, gz = z0 + z;
              if (gx < dims[0] && gy < dims[1] && gz < dims[2])
                win[wi] = volume[(gx * dims[1] + gy) * dims[2] + gz];
            }
        DecoderOutputs outs = model.forward(make_const(win));
        const Tensor& logits = outs.logits_full->value;  // [1,K,r,r,r]
        int64_t T = cfg.roi[0] * cfg.roi[1] * cfg.roi[2];

        wi = 0;
        for (int64_t x = 0; x < cfg.roi[0]; ++x)
          for (int64_t y = 0; y < cfg.roi[1]; ++y)
            for (int64_t z = 0; z < cfg.roi[2]; ++z, ++wi) {
              int64_t gx = x0 + x, gy = y0 + y, gz = z0 + z;
              if (gx >= dims[0] || gy >= dims[1] || gz >= dims[2]) continue;
              double m = logits[wi];
              for (int64_t k = 1; k < K; ++k) m = std::max(m, logits[k * T + wi]);
              double denom = 0.0;
              for (int64_t k = 0; k < K; ++k) denom += std::exp(logits[k * T + wi] - m);
              double w = wx[size_t(x)] * wy[size_t(y)] * wz[size_t(z)];
              int64_t g = (gx * dims[1] + gy) * dims[2] + gz;
              for (int64_t k = 0; k < K; ++k)
                acc[k * N + g] += w * std::exp(logits[k * T + wi] - m) / denom;
              wsum[size_t(g)] += w;
            }
      }

  for (int64_t g = 0; g < N; ++g) {
    if (wsum[size_t(g)] <= 0.0)
      throw ContractError("sliding_window_infer: uncovered voxel " + std::to_string(g));
    for (int64_t k = 0; k < K; ++k) acc[k * N + g] /= wsum[size_t(g)];
  }
  return acc;
}

}  // namespace uvf
