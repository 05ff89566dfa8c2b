#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace uvf {

// Reverse-mode autodiff over a recorded operation graph. Nodes hold the
// forward value; each op installs a closure that pushes its output gradient
// into its parents. Graph recording is skipped entirely when no parent
// requires a gradient (or inside NoGradGuard), so inference passes carry no
// tape.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  std::string name;

  void ensure_grad() {
    if (!grad_ready) {
      grad = Tensor(value.shape(), 0.0);
      grad_ready = true;
    }
  }
  void zero_grad() {
    if (grad_ready) grad.fill(0.0);
  }
};

Var make_leaf(Tensor value, bool requires_grad = false, std::string name = "");
inline Var make_const(Tensor value) { return make_leaf(std::move(value), false); }

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  bool prev;
};
bool grad_enabled();

// Seeds the scalar loss with gradient 1 and propagates through the recorded
// graph in reverse topological order. Repeated calls accumulate.
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs_op(const Var& a);
// log(max(x, floor)); gradient is 0 on the clamped region
Var clamped_log(const Var& a, double floor);
Var leaky_relu(const Var& a, double slope);
Var gelu(const Var& a);

// ---- reductions / broadcast ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
// [r, c] -> [r]
Var sum_lastaxis(const Var& a);
// X[r, c] + b[c] broadcast over rows
Var add_rowvec(const Var& x, const Var& b);

// ---- linear algebra / structure ----
Var matmul(const Var& a, const Var& b);
// x[r, in] * w[in, out] + b[out]; b may be null
Var linear(const Var& x, const Var& w, const Var& b);
Var reshape(const Var& a, Shape s);
// [r, c] -> [c, r]
Var transpose2d(const Var& a);
// Concatenate [r, ci] blocks along the last axis
Var concat_lastaxis(const std::vector<Var>& parts);
// Concatenate [1, Ci, H, W, D] tensors along the channel axis
Var concat_channels(const std::vector<Var>& parts);
// Rows gathered by index; index -1 yields a zero row. Backward scatter-adds,
// so repeated indices are handled exactly.
Var gather_rows(const Var& x, std::shared_ptr<const std::vector<int64_t>> indices);
Var gather_rows(const Var& x, std::vector<int64_t> indices);

// ---- neural ops ----
Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int padding);
Var transposed_conv3d(const Var& x, const Var& w, const Var& b, int stride = 2, int k = 2);
Var trilinear_upsample(const Var& x, int factor);
// Per-row normalization of [r, c] with affine [c]
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
// Per-(sample, channel) normalization of [N, C, H, W, D] with affine [C]
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
// Softmax over the last axis of any shape
Var softmax_lastaxis(const Var& x);

// Fused multi-head window attention over x[nW, T, C].
//   logits = Q Kᵀ / sqrt(d) + B[bias_index] + mask, per window and head
//   out    = softmax(logits) V, heads concatenated, output-projected
// bias_index has T*T entries into the (2M-1)^3-row bias_table; mask, when
// present, is an additive [nW, T, T] constant (0 or -1e9).
Var window_attention(const Var& x, const Var& wqkv, const Var& bqkv, const Var& wo,
                     const Var& bo, const Var& bias_table,
                     std::shared_ptr<const std::vector<int64_t>> bias_index,
                     std::shared_ptr<const Tensor> mask, int num_heads);

}  // namespace uvf
