#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "tensor.hpp"

namespace uvf {

// Deterministic RNG wrapper. mt19937_64 output is fixed by the standard;
// the distribution transforms below are our own so streams are identical
// across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t bounded(uint64_t n) {
    if (n == 0) throw DomainError("bounded(0)");
    uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (no cached spare, keeps the stream simple).
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Truncated normal: resample outside [-2σ, 2σ].
  double trunc_normal(double std) {
    for (;;) {
      double v = gaussian() * std;
      if (std::abs(v) <= 2.0 * std) return v;
    }
  }

  // Partial Fisher-Yates: k distinct indices sampled uniformly from [0, n).
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < k; ++i) {
      int64_t j = i + static_cast<int64_t>(bounded(static_cast<uint64_t>(n - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(k));
    return idx;
  }

  void fill_gaussian(Tensor& t, double std) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = gaussian() * std;
  }
  void fill_trunc_normal(Tensor& t, double std) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = trunc_normal(std);
  }
  void fill_uniform(Tensor& t, double lo, double hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace uvf
