#pragma once

#include "params.hpp"
#include "rng.hpp"

namespace uvf {

constexpr double kNormEps = 1e-5;
constexpr double kLeakySlope = 0.01;

// Two consecutive 3x3x3 convolutions, each followed by instance norm and
// Leaky ReLU. Spatial shape is preserved (padding 1).
struct CnnBlockParams {
  Var w1, b1, in1_g, in1_b;
  Var w2, b2, in2_g, in2_b;
  int64_t cin = 0, cout = 0;

  static CnnBlockParams create(ParamRegistry& reg, const std::string& prefix,
                               int64_t cin, int64_t cout, Rng& rng) {
    CnnBlockParams p;
    p.cin = cin;
    p.cout = cout;
    auto conv_w = [&](int64_t ci, int64_t co) {
      Tensor w({co, ci, 3, 3, 3});
      rng.fill_trunc_normal(w, std::sqrt(2.0 / double(ci * 27)));
      return w;
    };
    p.w1 = reg.add(prefix + ".conv1.w", conv_w(cin, cout));
    p.b1 = reg.add(prefix + ".conv1.b", Tensor({cout}, 0.0));
    p.in1_g = reg.add(prefix + ".in1.g", Tensor({cout}, 1.0));
    p.in1_b = reg.add(prefix + ".in1.b", Tensor({cout}, 0.0));
    p.w2 = reg.add(prefix + ".conv2.w", conv_w(cout, cout));
    p.b2 = reg.add(prefix + ".conv2.b", Tensor({cout}, 0.0));
    p.in2_g = reg.add(prefix + ".in2.g", Tensor({cout}, 1.0));
    p.in2_b = reg.add(prefix + ".in2.b", Tensor({cout}, 0.0));
    return p;
  }
};

inline Var cnn_block(const Var& x, const CnnBlockParams& p) {
  Var h = conv3d(x, p.w1, p.b1, 1, 1);
  h = instance_norm(h, p.in1_g, p.in1_b, kNormEps);
  h = leaky_relu(h, kLeakySlope);
  h = conv3d(h, p.w2, p.b2, 1, 1);
  h = instance_norm(h, p.in2_g, p.in2_b, kNormEps);
  return leaky_relu(h, kLeakySlope);
}

// 2x2x2 stride-2 deconvolution parameters (resolution doubling).
struct DeconvParams {
  Var w, b;
  static DeconvParams create(ParamRegistry& reg, const std::string& prefix, int64_t cin,
                             int64_t cout, Rng& rng) {
    DeconvParams p;
    Tensor w({cin, cout, 2, 2, 2});
    rng.fill_trunc_normal(w, std::sqrt(2.0 / double(cin * 8)));
    p.w = reg.add(prefix + ".w", std::move(w));
    p.b = reg.add(prefix + ".b", Tensor({cout}, 0.0));
    return p;
  }
};

inline Var deconv(const Var& x, const DeconvParams& p) {
  return transposed_conv3d(x, p.w, p.b, 2, 2);
}

// 1x1x1 convolution (pointwise linear over channels).
struct PointwiseParams {
  Var w, b;
  static PointwiseParams create(ParamRegistry& reg, const std::string& prefix, int64_t cin,
                                int64_t cout, Rng& rng) {
    PointwiseParams p;
    Tensor w({cout, cin, 1, 1, 1});
    rng.fill_trunc_normal(w, 0.02);
    p.w = reg.add(prefix + ".w", std::move(w));
    p.b = reg.add(prefix + ".b", Tensor({cout}, 0.0));
    return p;
  }
};

inline Var pointwise(const Var& x, const PointwiseParams& p) {
  return conv3d(x, p.w, p.b, 1, 0);
}

}  // namespace uvf
