#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace uvf {

namespace {

thread_local bool g_grad_enabled = true;

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn,
            const char* name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  check_finite(n->value, name);
  bool rg = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p && p->requires_grad) rg = true;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) +
                     " vs " + shape_str(b->value.shape()));
}

inline void axpy(double a, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }
bool grad_enabled() { return g_grad_enabled; }

Var make_leaf(Tensor value, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && g_grad_enabled;
  n->name = std::move(name);
  return n;
}

void backward(const Var& loss) {
  if (loss->value.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss->value.shape()));
  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_op(std::move(out), {a, b},
                 [](Node& self) {
                   for (int k = 0; k < 2; ++k) {
                     Node* p = self.parents[k].get();
                     if (!p->requires_grad) continue;
                     p->ensure_grad();
                     axpy(1.0, self.grad.data(), p->grad.data(), self.grad.numel());
                   }
                 },
                 "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_op(std::move(out), {a, b},
                 [](Node& self) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     axpy(1.0, self.grad.data(), pa->grad.data(), self.grad.numel());
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     axpy(-1.0, self.grad.data(), pb->grad.data(), self.grad.numel());
                   }
                 },
                 "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_op(std::move(out), {a, b},
                 [](Node& self) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     for (int64_t i = 0; i < self.grad.numel(); ++i)
                       pa->grad[i] += self.grad[i] * pb->value[i];
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     for (int64_t i = 0; i < self.grad.numel(); ++i)
                       pb->grad[i] += self.grad[i] * pa->value[i];
                   }
                 },
                 "mul");
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
  return make_op(std::move(out), {a, b},
                 [](Node& self) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   for (int64_t i = 0; i < self.grad.numel(); ++i) {
                     double binv = 1.0 / pb->value[i];
                     if (pa->requires_grad) {
                       pa->ensure_grad();
                       pa->grad[i] += self.grad[i] * binv;
                     }
                     if (pb->requires_grad) {
                       pb->ensure_grad();
                       pb->grad[i] -= self.grad[i] * pa->value[i] * binv * binv;
                     }
                   }
                 },
                 "div");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_op(std::move(out), {a},
                 [s](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   axpy(s, self.grad.data(), p->grad.data(), self.grad.numel());
                 },
                 "scale");
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make_op(std::move(out), {a},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   axpy(1.0, self.grad.data(), p->grad.data(), self.grad.numel());
                 },
                 "add_scalar");
}

Var abs_op(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
  return make_op(std::move(out), {a},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (int64_t i = 0; i < self.grad.numel(); ++i) {
                     double x = p->value[i];
                     double s = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                     p->grad[i] += self.grad[i] * s;
                   }
                 },
                 "abs");
}

Var clamped_log(const Var& a, double floor) {
  if (floor <= 0.0) throw ConfigError("clamped_log: floor must be positive");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(out[i], floor));
  return make_op(std::move(out), {a},
                 [floor](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (int64_t i = 0; i < self.grad.numel(); ++i) {
                     double x = p->value[i];
                     if (x > floor) p->grad[i] += self.grad[i] / x;
                   }
                 },
                 "clamped_log");
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] *= slope;
  return make_op(std::move(out), {a},
                 [slope](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (int64_t i = 0; i < self.grad.numel(); ++i)
                     p->grad[i] += self.grad[i] * (p->value[i] >= 0.0 ? 1.0 : slope);
                 },
                 "leaky_relu");
}

Var gelu(const Var& a) {
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  return make_op(std::move(out), {a},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (int64_t i = 0; i < self.grad.numel(); ++i) {
                     double x = p->value[i];
                     double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                     double pdf = std::exp(-0.5 * x * x) * inv_sqrt2pi;
                     p->grad[i] += self.grad[i] * (cdf + x * pdf);
                   }
                 },
                 "gelu");
}

// ---------------------------------------------------------------------------
// reductions / broadcast
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s), {a},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   double g = self.grad[0];
                   for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += g;
                 },
                 "sum_all");
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / double(a->value.numel())); }

Var sum_lastaxis(const Var& a) {
  if (a->value.ndim() != 2) throw ShapeError("sum_lastaxis expects a 2-D tensor");
  int64_t r = a->value.rows(), c = a->value.cols();
  Tensor out({r});
  for (int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    const double* row = a->value.data() + i * c;
    for (int64_t j = 0; j < c; ++j) s += row[j];
    out[i] = s;
  }
  return make_op(std::move(out), {a},
                 [c](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   int64_t r = self.grad.numel();
                   for (int64_t i = 0; i < r; ++i) {
                     double g = self.grad[i];
                     double* row = p->grad.data() + i * c;
                     for (int64_t j = 0; j < c; ++j) row[j] += g;
                   }
                 },
                 "sum_lastaxis");
}

Var add_rowvec(const Var& x, const Var& b) {
  int64_t n = x->value.numel();
  int64_t c = b->value.numel();
  if (n % c != 0)
    throw ShapeError("add_rowvec: vector length does not divide tensor size");
  Tensor out = x->value;
  for (int64_t i = 0; i < n; ++i) out[i] += b->value[i % c];
  return make_op(std::move(out), {x, b},
                 [c](Node& self) {
                   Node* px = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (px->requires_grad) {
                     px->ensure_grad();
                     axpy(1.0, self.grad.data(), px->grad.data(), self.grad.numel());
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     for (int64_t i = 0; i < self.grad.numel(); ++i)
                       pb->grad[i % c] += self.grad[i];
                   }
                 },
                 "add_rowvec");
}

// ---------------------------------------------------------------------------
// linear algebra / structure
// ---------------------------------------------------------------------------

namespace {
void mm_acc(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  // C[m,n] += A[m,k] B[k,n]
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* crow = C + i * n;
    for (int64_t t = 0; t < k; ++t) {
      double a = arow[t];
      if (a == 0.0) continue;
      axpy(a, B + t * n, crow, n);
    }
  }
}
void mm_at_acc(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  // C[k,n] += Aᵀ[k,m] B[m,n]  (A is [m,k])
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    const double* brow = B + i * n;
    for (int64_t t = 0; t < k; ++t) {
      double a = arow[t];
      if (a == 0.0) continue;
      axpy(a, brow, C + t * n, n);
    }
  }
}
void mm_bt_acc(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  // C[m,k] += A[m,n] Bᵀ[n,k]  (B is [k,n])
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = A + i * n;
    double* crow = C + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const double* brow = B + t * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[t] += s;
    }
  }
}
}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2)
    throw ShapeError("matmul expects 2-D tensors");
  int64_t m = a->value.rows(), k = a->value.cols();
  if (b->value.rows() != k)
    throw ShapeError("matmul: inner dims " + std::to_string(k) + " vs " +
                     std::to_string(b->value.rows()));
  int64_t n = b->value.cols();
  Tensor out({m, n}, 0.0);
  mm_acc(a->value.data(), b->value.data(), out.data(), m, k, n);
  return make_op(std::move(out), {a, b},
                 [m, k, n](Node& self) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     mm_bt_acc(self.grad.data(), pb->value.data(), pa->grad.data(), m, k, n);
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     mm_at_acc(pa->value.data(), self.grad.data(), pb->grad.data(), m, k, n);
                   }
                 },
                 "matmul");
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b ? add_rowvec(y, b) : y;
}

Var reshape(const Var& a, Shape s) {
  Tensor out = a->value.reshaped(std::move(s));
  return make_op(std::move(out), {a},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   axpy(1.0, self.grad.data(), p->grad.data(), self.grad.numel());
                 },
                 "reshape");
}

Var transpose2d(const Var& a) {
  if (a->value.ndim() != 2) throw ShapeError("transpose2d expects a 2-D tensor");
  int64_t r = a->value.rows(), c = a->value.cols();
  Tensor out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.data()[j * r + i] = a->value.data()[i * c + j];
  return make_op(std::move(out), {a},
                 [r, c](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (int64_t j = 0; j < c; ++j)
                     for (int64_t i = 0; i < r; ++i)
                       p->grad.data()[i * c + j] += self.grad.data()[j * r + i];
                 },
                 "transpose2d");
}

Var concat_lastaxis(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastaxis: no inputs");
  int64_t r = parts[0]->value.rows();
  int64_t ctot = 0;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    if (p->value.ndim() != 2 || p->value.rows() != r)
      throw ShapeError("concat_lastaxis: row mismatch");
    widths.push_back(p->value.cols());
    ctot += p->value.cols();
  }
  Tensor out({r, ctot});
  int64_t off = 0;
  for (size_t q = 0; q < parts.size(); ++q) {
    int64_t c = widths[q];
    const double* src = parts[q]->value.data();
    for (int64_t i = 0; i < r; ++i)
      std::copy(src + i * c, src + (i + 1) * c, out.data() + i * ctot + off);
    off += c;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(parents),
                 [widths, r, ctot](Node& self) {
                   int64_t off = 0;
                   for (size_t q = 0; q < self.parents.size(); ++q) {
                     Node* p = self.parents[q].get();
                     int64_t c = widths[q];
                     if (p->requires_grad) {
                       p->ensure_grad();
                       for (int64_t i = 0; i < r; ++i)
                         axpy(1.0, self.grad.data() + i * ctot + off,
                              p->grad.data() + i * c, c);
                     }
                     off += c;
                   }
                 },
                 "concat_lastaxis");
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0]->value.shape();
  if (s0.size() != 5 || s0[0] != 1)
    throw ShapeError("concat_channels expects [1,C,H,W,D] tensors");
  int64_t ctot = 0;
  for (const auto& p : parts) {
    const Shape& s = p->value.shape();
    if (s.size() != 5 || s[0] != 1 || s[2] != s0[2] || s[3] != s0[3] || s[4] != s0[4])
      throw ShapeError("concat_channels: spatial shape mismatch");
    ctot += s[1];
  }
  Tensor out({1, ctot, s0[2], s0[3], s0[4]});
  int64_t off = 0;
  std::vector<int64_t> sizes;
  for (const auto& p : parts) {
    int64_t n = p->value.numel();
    std::copy(p->value.data(), p->value.data() + n, out.data() + off);
    sizes.push_back(n);
    off += n;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(parents),
                 [sizes](Node& self) {
                   int64_t off = 0;
                   for (size_t q = 0; q < self.parents.size(); ++q) {
                     Node* p = self.parents[q].get();
                     if (p->requires_grad) {
                       p->ensure_grad();
                       axpy(1.0, self.grad.data() + off, p->grad.data(), sizes[q]);
                     }
                     off += sizes[q];
                   }
                 },
                 "concat_channels");
}

Var gather_rows(const Var& x, std::shared_ptr<const std::vector<int64_t>> indices) {
  if (x->value.ndim() != 2) throw ShapeError("gather_rows expects a 2-D tensor");
  int64_t c = x->value.cols();
  int64_t r = x->value.rows();
  int64_t m = static_cast<int64_t>(indices->size());
  Tensor out({m, c});
  for (int64_t i = 0; i < m; ++i) {
    int64_t src = (*indices)[static_cast<size_t>(i)];
    if (src < 0) continue;  // pad row, stays zero
    if (src >= r) throw ShapeError("gather_rows: index out of range");
    std::copy(x->value.data() + src * c, x->value.data() + (src + 1) * c,
              out.data() + i * c);
  }
  return make_op(std::move(out), {x},
                 [indices, c](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   int64_t m = static_cast<int64_t>(indices->size());
                   for (int64_t i = 0; i < m; ++i) {
                     int64_t dst = (*indices)[static_cast<size_t>(i)];
                     if (dst < 0) continue;
                     axpy(1.0, self.grad.data() + i * c, p->grad.data() + dst * c, c);
                   }
                 },
                 "gather_rows");
}

Var gather_rows(const Var& x, std::vector<int64_t> indices) {
  return gather_rows(x, std::make_shared<const std::vector<int64_t>>(std::move(indices)));
}

// ---------------------------------------------------------------------------
// conv / upsample
// ---------------------------------------------------------------------------

namespace {
struct ConvDims {
  int64_t N, Ci, H, W, D, Co, k, Ho, Wo, Do;
  int s, p;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
  if (x.ndim() != 5) throw ShapeError("conv3d: input must be 5-D, got " + shape_str(x.shape()));
  if (w.ndim() != 5) throw ShapeError("conv3d: weight must be 5-D");
  ConvDims d;
  d.N = x.dim(0); d.Ci = x.dim(1); d.H = x.dim(2); d.W = x.dim(3); d.D = x.dim(4);
  d.Co = w.dim(0); d.k = w.dim(2);
  if (w.dim(1) != d.Ci)
    throw ShapeError("conv3d: weight in-channels " + std::to_string(w.dim(1)) +
                     " vs input channels " + std::to_string(d.Ci));
  if (w.dim(3) != d.k || w.dim(4) != d.k) throw ShapeError("conv3d: kernel must be cubic");
  if (!(d.k % 2 == 1 || d.k == 2)) throw ShapeError("conv3d: kernel size must be odd or 2");
  if (stride < 1) throw ConfigError("conv3d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv3d: padding must be >= 0");
  d.s = stride; d.p = padding;
  auto out_extent = [&](int64_t in) { return (in + 2 * padding - d.k) / stride + 1; };
  d.Ho = out_extent(d.H); d.Wo = out_extent(d.W); d.Do = out_extent(d.D);
  if (d.Ho < 1 || d.Wo < 1 || d.Do < 1)
    throw DomainError("conv3d: zero-size output for input " + shape_str(x.shape()));
  return d;
}

// Valid output-coordinate range [lo, hi) for a kernel tap: needs
// 0 <= o*s - p + koff < in_extent.
inline void tap_range(int64_t in, int64_t out, int s, int p, int64_t koff,
                      int64_t& lo, int64_t& hi) {
  int64_t shift = koff - p;  // i = o*s + shift
  lo = shift < 0 ? (-shift + s - 1) / s : 0;
  int64_t max_o = (in - 1 - shift) >= 0 ? (in - 1 - shift) / s : -1;
  hi = std::min(out - 1, max_o) + 1;
  if (hi < lo) hi = lo;
}
}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int padding) {
  ConvDims dm = conv_dims(x->value, w->value, stride, padding);
  if (b && b->value.numel() != dm.Co) throw ShapeError("conv3d: bias length != Cout");
  Tensor out({dm.N, dm.Co, dm.Ho, dm.Wo, dm.Do}, 0.0);
  const int64_t in_sp = dm.H * dm.W * dm.D;
  const int64_t out_sp = dm.Ho * dm.Wo * dm.Do;
  for (int64_t n = 0; n < dm.N; ++n) {
    for (int64_t co = 0; co < dm.Co; ++co) {
      double* oc = out.data() + (n * dm.Co + co) * out_sp;
      if (b) {
        double bv = b->value[co];
        for (int64_t i = 0; i < out_sp; ++i) oc[i] = bv;
      }
      for (int64_t ci = 0; ci < dm.Ci; ++ci) {
        const double* ic = x->value.data() + (n * dm.Ci + ci) * in_sp;
        const double* wk = w->value.data() + (co * dm.Ci + ci) * dm.k * dm.k * dm.k;
        for (int64_t kx = 0; kx < dm.k; ++kx) {
          int64_t xlo, xhi; tap_range(dm.H, dm.Ho, dm.s, dm.p, kx, xlo, xhi);
          for (int64_t ky = 0; ky < dm.k; ++ky) {
            int64_t ylo, yhi; tap_range(dm.W, dm.Wo, dm.s, dm.p, ky, ylo, yhi);
            for (int64_t kz = 0; kz < dm.k; ++kz) {
              int64_t zlo, zhi; tap_range(dm.D, dm.Do, dm.s, dm.p, kz, zlo, zhi);
              double wv = wk[(kx * dm.k + ky) * dm.k + kz];
              if (wv == 0.0) continue;
              for (int64_t ox = xlo; ox < xhi; ++ox) {
                int64_t ix = ox * dm.s - dm.p + kx;
                for (int64_t oy = ylo; oy < yhi; ++oy) {
                  int64_t iy = oy * dm.s - dm.p + ky;
                  const double* irow = ic + (ix * dm.W + iy) * dm.D - dm.p + kz;
                  double* orow = oc + (ox * dm.Wo + oy) * dm.Do;
                  if (dm.s == 1) {
                    for (int64_t oz = zlo; oz < zhi; ++oz) orow[oz] += wv * irow[oz];
                  } else {
                    for (int64_t oz = zlo; oz < zhi; ++oz)
                      orow[oz] += wv * irow[oz * dm.s];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return make_op(
      std::move(out), {x, w, b ? b : x},
      [dm, has_bias = static_cast<bool>(b)](Node& self) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        Node* pb = has_bias ? self.parents[2].get() : nullptr;
        const int64_t in_sp = dm.H * dm.W * dm.D;
        const int64_t out_sp = dm.Ho * dm.Wo * dm.Do;
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (int64_t n = 0; n < dm.N; ++n)
            for (int64_t co = 0; co < dm.Co; ++co) {
              const double* gc = self.grad.data() + (n * dm.Co + co) * out_sp;
              double s = 0.0;
              for (int64_t i = 0; i < out_sp; ++i) s += gc[i];
              pb->grad[co] += s;
            }
        }
        bool need_x = px->requires_grad, need_w = pw->requires_grad;
        if (need_x) px->ensure_grad();
        if (need_w) pw->ensure_grad();
        if (!need_x && !need_w) return;
        for (int64_t n = 0; n < dm.N; ++n) {
          for (int64_t co = 0; co < dm.Co; ++co) {
            const double* gc = self.grad.data() + (n * dm.Co + co) * out_sp;
            for (int64_t ci = 0; ci < dm.Ci; ++ci) {
              const double* ic = px->value.data() + (n * dm.Ci + ci) * in_sp;
              double* gic = need_x ? px->grad.data() + (n * dm.Ci + ci) * in_sp : nullptr;
              const double* wk = pw->value.data() + (co * dm.Ci + ci) * dm.k * dm.k * dm.k;
              double* gwk = need_w ? pw->grad.data() + (co * dm.Ci + ci) * dm.k * dm.k * dm.k
                                   : nullptr;
              for (int64_t kx = 0; kx < dm.k; ++kx) {
                int64_t xlo, xhi; tap_range(dm.H, dm.Ho, dm.s, dm.p, kx, xlo, xhi);
                for (int64_t ky = 0; ky < dm.k; ++ky) {
                  int64_t ylo, yhi; tap_range(dm.W, dm.Wo, dm.s, dm.p, ky, ylo, yhi);
                  for (int64_t kz = 0; kz < dm.k; ++kz) {
                    int64_t zlo, zhi; tap_range(dm.D, dm.Do, dm.s, dm.p, kz, zlo, zhi);
                    double wv = wk[(kx * dm.k + ky) * dm.k + kz];
                    double wg = 0.0;
                    for (int64_t ox = xlo; ox < xhi; ++ox) {
                      int64_t ix = ox * dm.s - dm.p + kx;
                      for (int64_t oy = ylo; oy < yhi; ++oy) {
                        int64_t iy = oy * dm.s - dm.p + ky;
                        const double* irow = ic + (ix * dm.W + iy) * dm.D - dm.p + kz;
                        double* girow =
                            need_x ? gic + (ix * dm.W + iy) * dm.D - dm.p + kz : nullptr;
                        const double* grow = gc + (ox * dm.Wo + oy) * dm.Do;
                        for (int64_t oz = zlo; oz < zhi; ++oz) {
                          double g = grow[oz];
                          int64_t iz = oz * dm.s;
                          if (need_w) wg += g * irow[iz];
                          if (need_x) girow[iz] += g * wv;
                        }
                      }
                    }
                    if (need_w) gwk[(kx * dm.k + ky) * dm.k + kz] += wg;
                  }
                }
              }
            }
          }
        }
      },
      "conv3d");
}

Var transposed_conv3d(const Var& x, const Var& w, const Var& b, int stride, int k) {
  if (stride != 2 || k != 2)
    throw ConfigError("transposed_conv3d supports only stride=2, k=2");
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 5) throw ShapeError("transposed_conv3d: input must be 5-D");
  if (wv.ndim() != 5 || wv.dim(2) != 2 || wv.dim(3) != 2 || wv.dim(4) != 2)
    throw ShapeError("transposed_conv3d: weight must be [Cin,Cout,2,2,2]");
  int64_t N = xv.dim(0), Ci = xv.dim(1), h = xv.dim(2), ww = xv.dim(3), d = xv.dim(4);
  if (wv.dim(0) != Ci) throw ShapeError("transposed_conv3d: weight Cin mismatch");
  int64_t Co = wv.dim(1);
  if (b && b->value.numel() != Co) throw ShapeError("transposed_conv3d: bias length != Cout");
  int64_t H = 2 * h, W = 2 * ww, D = 2 * d;
  Tensor out({N, Co, H, W, D}, 0.0);
  int64_t in_sp = h * ww * d, out_sp = H * W * D;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Co; ++co) {
      double* oc = out.data() + (n * Co + co) * out_sp;
      if (b) {
        double bv = b->value[co];
        for (int64_t i = 0; i < out_sp; ++i) oc[i] = bv;
      }
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const double* ic = x->value.data() + (n * Ci + ci) * in_sp;
        const double* wk = wv.data() + (ci * Co + co) * 8;
        for (int64_t ix = 0; ix < h; ++ix)
          for (int64_t iy = 0; iy < ww; ++iy)
            for (int64_t iz = 0; iz < d; ++iz) {
              double v = ic[(ix * ww + iy) * d + iz];
              double* base = oc + ((2 * ix) * W + 2 * iy) * D + 2 * iz;
              for (int a = 0; a < 2; ++a)
                for (int bb = 0; bb < 2; ++bb)
                  for (int c = 0; c < 2; ++c)
                    base[(a * W + bb) * D + c] += v * wk[(a * 2 + bb) * 2 + c];
            }
      }
    }
  }
  return make_op(
      std::move(out), {x, w, b ? b : x},
      [N, Ci, Co, h, ww, d, H, W, D, has_bias = static_cast<bool>(b)](Node& self) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        Node* pb = has_bias ? self.parents[2].get() : nullptr;
        int64_t in_sp = h * ww * d, out_sp = H * W * D;
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Co; ++co) {
              const double* gc = self.grad.data() + (n * Co + co) * out_sp;
              double s = 0.0;
              for (int64_t i = 0; i < out_sp; ++i) s += gc[i];
              pb->grad[co] += s;
            }
        }
        bool need_x = px->requires_grad, need_w = pw->requires_grad;
        if (need_x) px->ensure_grad();
        if (need_w) pw->ensure_grad();
        if (!need_x && !need_w) return;
        for (int64_t n = 0; n < N; ++n)
          for (int64_t co = 0; co < Co; ++co) {
            const double* gc = self.grad.data() + (n * Co + co) * out_sp;
            for (int64_t ci = 0; ci < Ci; ++ci) {
              const double* ic = px->value.data() + (n * Ci + ci) * in_sp;
              double* gic = need_x ? px->grad.data() + (n * Ci + ci) * in_sp : nullptr;
              const double* wk = pw->value.data() + (ci * Co + co) * 8;
              double* gwk = need_w ? pw->grad.data() + (ci * Co + co) * 8 : nullptr;
              for (int64_t ix = 0; ix < h; ++ix)
                for (int64_t iy = 0; iy < ww; ++iy)
                  for (int64_t iz = 0; iz < d; ++iz) {
                    int64_t ii = (ix * ww + iy) * d + iz;
                    const double* gbase = gc + ((2 * ix) * W + 2 * iy) * D + 2 * iz;
                    double xg = 0.0;
                    double xv = ic[ii];
                    for (int a = 0; a < 2; ++a)
                      for (int bb = 0; bb < 2; ++bb)
                        for (int c = 0; c < 2; ++c) {
                          double g = gbase[(a * W + bb) * D + c];
                          int wi = (a * 2 + bb) * 2 + c;
                          xg += g * wk[wi];
                          if (need_w) gwk[wi] += g * xv;
                        }
                    if (need_x) gic[ii] += xg;
                  }
            }
          }
      },
      "transposed_conv3d");
}

namespace {
// Align-corners source positions for one axis.
struct AxisMap {
  std::vector<int64_t> i0;
  std::vector<double> t;  // weight of i0+1
};
AxisMap axis_map(int64_t in, int64_t out) {
  AxisMap m;
  m.i0.resize(static_cast<size_t>(out));
  m.t.resize(static_cast<size_t>(out));
  for (int64_t o = 0; o < out; ++o) {
    if (in == 1) { m.i0[o] = 0; m.t[o] = 0.0; continue; }
    double pos = double(o) * double(in - 1) / double(out - 1);
    int64_t i0 = std::min<int64_t>(static_cast<int64_t>(pos), in - 2);
    m.i0[o] = i0;
    m.t[o] = pos - double(i0);
  }
  return m;
}
}  // namespace

Var trilinear_upsample(const Var& x, int factor) {
  if (factor < 2) throw ConfigError("trilinear_upsample: factor must be >= 2");
  const Tensor& xv = x->value;
  if (xv.ndim() != 5) throw ShapeError("trilinear_upsample: input must be 5-D");
  int64_t N = xv.dim(0), C = xv.dim(1), h = xv.dim(2), w = xv.dim(3), d = xv.dim(4);
  int64_t H = h * factor, W = w * factor, D = d * factor;
  auto mx = std::make_shared<AxisMap>(axis_map(h, H));
  auto my = std::make_shared<AxisMap>(axis_map(w, W));
  auto mz = std::make_shared<AxisMap>(axis_map(d, D));
  Tensor out({N, C, H, W, D});
  int64_t in_sp = h * w * d, out_sp = H * W * D;
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* ic = xv.data() + nc * in_sp;
    double* oc = out.data() + nc * out_sp;
    for (int64_t ox = 0; ox < H; ++ox) {
      int64_t x0 = mx->i0[ox]; double tx = mx->t[ox];
      for (int64_t oy = 0; oy < W; ++oy) {
        int64_t y0 = my->i0[oy]; double ty = my->t[oy];
        for (int64_t oz = 0; oz < D; ++oz) {
          int64_t z0 = mz->i0[oz]; double tz = mz->t[oz];
          int64_t x1 = (h == 1) ? x0 : x0 + 1;
          int64_t y1 = (w == 1) ? y0 : y0 + 1;
          int64_t z1 = (d == 1) ? z0 : z0 + 1;
          auto at = [&](int64_t a, int64_t bq, int64_t c) {
            return ic[(a * w + bq) * d + c];
          };
          double c00 = at(x0, y0, z0) * (1 - tz) + at(x0, y0, z1) * tz;
          double c01 = at(x0, y1, z0) * (1 - tz) + at(x0, y1, z1) * tz;
          double c10 = at(x1, y0, z0) * (1 - tz) + at(x1, y0, z1) * tz;
          double c11 = at(x1, y1, z0) * (1 - tz) + at(x1, y1, z1) * tz;
          double c0 = c00 * (1 - ty) + c01 * ty;
          double c1 = c10 * (1 - ty) + c11 * ty;
          oc[(ox * W + oy) * D + oz] = c0 * (1 - tx) + c1 * tx;
        }
      }
    }
  }
  return make_op(
      std::move(out), {x},
      [N, C, h, w, d, H, W, D, mx, my, mz](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        int64_t in_sp = h * w * d, out_sp = H * W * D;
        for (int64_t nc = 0; nc < N * C; ++nc) {
          double* gic = p->grad.data() + nc * in_sp;
          const double* gc = self.grad.data() + nc * out_sp;
          for (int64_t ox = 0; ox < H; ++ox) {
            int64_t x0 = mx->i0[ox]; double tx = mx->t[ox];
            int64_t x1 = (h == 1) ? x0 : x0 + 1;
            for (int64_t oy = 0; oy < W; ++oy) {
              int64_t y0 = my->i0[oy]; double ty = my->t[oy];
              int64_t y1 = (w == 1) ? y0 : y0 + 1;
              for (int64_t oz = 0; oz < D; ++oz) {
                int64_t z0 = mz->i0[oz]; double tz = mz->t[oz];
                int64_t z1 = (d == 1) ? z0 : z0 + 1;
                double g = gc[(ox * W + oy) * D + oz];
                auto acc = [&](int64_t a, int64_t bq, int64_t c, double wgt) {
                  gic[(a * w + bq) * d + c] += g * wgt;
                };
                acc(x0, y0, z0, (1 - tx) * (1 - ty) * (1 - tz));
                acc(x0, y0, z1, (1 - tx) * (1 - ty) * tz);
                acc(x0, y1, z0, (1 - tx) * ty * (1 - tz));
                acc(x0, y1, z1, (1 - tx) * ty * tz);
                acc(x1, y0, z0, tx * (1 - ty) * (1 - tz));
                acc(x1, y0, z1, tx * (1 - ty) * tz);
                acc(x1, y1, z0, tx * ty * (1 - tz));
                acc(x1, y1, z1, tx * ty * tz);
              }
            }
          }
        }
      },
      "trilinear_upsample");
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

namespace {
// Shared normalization core over contiguous groups. gamma/beta are indexed by
// position within the group (layer norm) or by group id modulo C (instance
// norm), selected by per_group flag.
Var norm_impl(const Var& x, const Var& gamma, const Var& beta, double eps,
              int64_t group_len, bool per_group, int64_t C, const char* name) {
  if (eps <= 0.0) throw ConfigError(std::string(name) + ": eps must be positive");
  int64_t n_groups = x->value.numel() / group_len;
  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(n_groups));
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(n_groups));
  Tensor out(x->value.shape());
  for (int64_t g = 0; g < n_groups; ++g) {
    const double* xs = x->value.data() + g * group_len;
    double* os = out.data() + g * group_len;
    double m = 0.0;
    for (int64_t i = 0; i < group_len; ++i) m += xs[i];
    m /= double(group_len);
    double var = 0.0;
    for (int64_t i = 0; i < group_len; ++i) {
      double dv = xs[i] - m;
      var += dv * dv;
    }
    var /= double(group_len);
    double iv = 1.0 / std::sqrt(var + eps);
    (*mean)[g] = m;
    (*inv)[g] = iv;
    if (per_group) {
      double gm = gamma->value[g % C], bt = beta->value[g % C];
      for (int64_t i = 0; i < group_len; ++i) os[i] = (xs[i] - m) * iv * gm + bt;
    } else {
      for (int64_t i = 0; i < group_len; ++i)
        os[i] = (xs[i] - m) * iv * gamma->value[i] + beta->value[i];
    }
  }
  return make_op(
      std::move(out), {x, gamma, beta},
      [mean, inv, group_len, per_group, C, n_groups](Node& self) {
        Node* px = self.parents[0].get();
        Node* pg = self.parents[1].get();
        Node* pb = self.parents[2].get();
        if (px->requires_grad) px->ensure_grad();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        std::vector<double> gbuf(static_cast<size_t>(group_len));
        for (int64_t g = 0; g < n_groups; ++g) {
          const double* xs = px->value.data() + g * group_len;
          const double* dy = self.grad.data() + g * group_len;
          double m = (*mean)[g], iv = (*inv)[g];
          // g_i = gamma_i * dy_i; also accumulate affine grads
          double sum_g = 0.0, sum_gx = 0.0;
          for (int64_t i = 0; i < group_len; ++i) {
            double xh = (xs[i] - m) * iv;
            double gm = per_group ? pg->value[g % C] : pg->value[i];
            double gi = gm * dy[i];
            gbuf[i] = gi;
            sum_g += gi;
            sum_gx += gi * xh;
            if (pg->requires_grad) pg->grad[per_group ? g % C : i] += dy[i] * xh;
            if (pb->requires_grad) pb->grad[per_group ? g % C : i] += dy[i];
          }
          if (px->requires_grad) {
            double* dx = px->grad.data() + g * group_len;
            double mg = sum_g / double(group_len);
            double mgx = sum_gx / double(group_len);
            for (int64_t i = 0; i < group_len; ++i) {
              double xh = (xs[i] - m) * iv;
              dx[i] += iv * (gbuf[i] - mg - xh * mgx);
            }
          }
        }
      },
      name);
}
}  // namespace

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (x->value.ndim() < 1) throw ShapeError("layer_norm: empty shape");
  int64_t c = x->value.shape().back();
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw ShapeError("layer_norm: affine params must have last-axis length");
  return norm_impl(x, gamma, beta, eps, c, false, c, "layer_norm");
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (x->value.ndim() != 5) throw ShapeError("instance_norm: input must be 5-D");
  int64_t C = x->value.dim(1);
  int64_t sp = x->value.dim(2) * x->value.dim(3) * x->value.dim(4);
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw ShapeError("instance_norm: affine params must have C entries");
  return norm_impl(x, gamma, beta, eps, sp, true, C, "instance_norm");
}

namespace {
void softmax_rows(const double* in, double* out, int64_t rows, int64_t L) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* xs = in + r * L;
    double* os = out + r * L;
    double mx = xs[0];
    for (int64_t i = 1; i < L; ++i) mx = std::max(mx, xs[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < L; ++i) {
      os[i] = std::exp(xs[i] - mx);
      sum += os[i];
    }
    double invs = 1.0 / sum;
    for (int64_t i = 0; i < L; ++i) os[i] *= invs;
  }
}
}  // namespace

Var softmax_lastaxis(const Var& x) {
  if (x->value.ndim() < 1) throw ShapeError("softmax: empty shape");
  int64_t L = x->value.shape().back();
  int64_t rows = x->value.numel() / L;
  Tensor out(x->value.shape());
  softmax_rows(x->value.data(), out.data(), rows, L);
  return make_op(std::move(out), {x},
                 [L, rows](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* pr = self.value.data() + r * L;
                     const double* dy = self.grad.data() + r * L;
                     double* dx = p->grad.data() + r * L;
                     double dot = 0.0;
                     for (int64_t i = 0; i < L; ++i) dot += dy[i] * pr[i];
                     for (int64_t i = 0; i < L; ++i) dx[i] += pr[i] * (dy[i] - dot);
                   }
                 },
                 "softmax");
}

// ---------------------------------------------------------------------------
// fused window attention
// ---------------------------------------------------------------------------

Var window_attention(const Var& x, const Var& wqkv, const Var& bqkv, const Var& wo,
                     const Var& bo, const Var& bias_table,
                     std::shared_ptr<const std::vector<int64_t>> bias_index,
                     std::shared_ptr<const Tensor> mask, int num_heads) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw ShapeError("window_attention: input must be [nW,T,C]");
  int64_t nW = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  if (C % num_heads != 0)
    throw ConfigError("window_attention: channels " + std::to_string(C) +
                      " not divisible by heads " + std::to_string(num_heads));
  int64_t Hh = num_heads, dd = C / Hh;
  if (wqkv->value.dim(0) != C || wqkv->value.dim(1) != 3 * C)
    throw ShapeError("window_attention: wqkv must be [C,3C]");
  if (wo->value.dim(0) != C || wo->value.dim(1) != C)
    throw ShapeError("window_attention: wo must be [C,C]");
  if (bias_table->value.dim(1) != Hh)
    throw ConfigError("window_attention: bias table head count mismatch");
  if (static_cast<int64_t>(bias_index->size()) != T * T)
    throw ShapeError("window_attention: bias index size must be T*T");
  if (mask && (mask->dim(0) != nW || mask->dim(1) != T || mask->dim(2) != T))
    throw ShapeError("window_attention: mask must be [nW,T,T]");
  const double scale = 1.0 / std::sqrt(double(dd));

  auto qkv = std::make_shared<Tensor>(Shape{nW, T, 3 * C}, 0.0);
  // x (nW*T, C) x wqkv (C, 3C)
  mm_acc(xv.data(), wqkv->value.data(), qkv->data(), nW * T, C, 3 * C);
  if (bqkv)
    for (int64_t i = 0; i < nW * T; ++i)
      axpy(1.0, bqkv->value.data(), qkv->data() + i * 3 * C, 3 * C);

  auto probs = std::make_shared<Tensor>(Shape{nW, Hh, T, T}, 0.0);
  Tensor O({nW * T, C}, 0.0);
  std::vector<double> logits(static_cast<size_t>(T * T));
  for (int64_t w = 0; w < nW; ++w) {
    const double* qkv_w = qkv->data() + w * T * 3 * C;
    const double* mk = mask ? mask->data() + w * T * T : nullptr;
    for (int64_t h = 0; h < Hh; ++h) {
      const double* bt = bias_table->value.data();
      for (int64_t t = 0; t < T; ++t) {
        const double* q = qkv_w + t * 3 * C + h * dd;
        for (int64_t u = 0; u < T; ++u) {
          const double* k = qkv_w + u * 3 * C + C + h * dd;
          double s = 0.0;
          for (int64_t j = 0; j < dd; ++j) s += q[j] * k[j];
          s = s * scale + bt[(*bias_index)[t * T + u] * Hh + h];
          if (mk) s += mk[t * T + u];
          logits[t * T + u] = s;
        }
      }
      double* pw = probs->data() + (w * Hh + h) * T * T;
      softmax_rows(logits.data(), pw, T, T);
      for (int64_t t = 0; t < T; ++t) {
        double* orow = O.data() + (w * T + t) * C + h * dd;
        for (int64_t u = 0; u < T; ++u) {
          double p = pw[t * T + u];
          const double* v = qkv_w + u * 3 * C + 2 * C + h * dd;
          axpy(p, v, orow, dd);
        }
      }
    }
  }
  auto Optr = std::make_shared<Tensor>(std::move(O));
  Tensor Y({nW, T, C}, 0.0);
  mm_acc(Optr->data(), wo->value.data(), Y.data(), nW * T, C, C);
  if (bo)
    for (int64_t i = 0; i < nW * T; ++i)
      axpy(1.0, bo->value.data(), Y.data() + i * C, C);

  std::vector<Var> parents = {x, wqkv, wo, bias_table, bqkv ? bqkv : x, bo ? bo : x};
  bool has_bq = static_cast<bool>(bqkv), has_bo = static_cast<bool>(bo);
  return make_op(
      std::move(Y), std::move(parents),
      [nW, T, C, Hh, dd, scale, qkv, probs, Optr, bias_index, has_bq, has_bo](Node& self) {
        Node* px = self.parents[0].get();
        Node* pwqkv = self.parents[1].get();
        Node* pwo = self.parents[2].get();
        Node* ptab = self.parents[3].get();
        Node* pbq = has_bq ? self.parents[4].get() : nullptr;
        Node* pbo = has_bo ? self.parents[5].get() : nullptr;
        const double* dY = self.grad.data();
        // output projection
        if (pwo->requires_grad) {
          pwo->ensure_grad();
          mm_at_acc(Optr->data(), dY, pwo->grad.data(), nW * T, C, C);
        }
        if (pbo && pbo->requires_grad) {
          pbo->ensure_grad();
          for (int64_t i = 0; i < nW * T; ++i)
            axpy(1.0, dY + i * C, pbo->grad.data(), C);
        }
        Tensor dO({nW * T, C}, 0.0);
        mm_bt_acc(dY, pwo->value.data(), dO.data(), nW * T, C, C);
        // attention core
        Tensor dQKV({nW * T, 3 * C}, 0.0);
        if (ptab->requires_grad) ptab->ensure_grad();
        std::vector<double> dP(static_cast<size_t>(T * T));
        std::vector<double> dS(static_cast<size_t>(T * T));
        for (int64_t w = 0; w < nW; ++w) {
          const double* qkv_w = qkv->data() + w * T * 3 * C;
          double* dqkv_w = dQKV.data() + w * T * 3 * C;
          for (int64_t h = 0; h < Hh; ++h) {
            const double* pw = probs->data() + (w * Hh + h) * T * T;
            // dP = dO_h V^T ; dV += P^T dO_h
            for (int64_t t = 0; t < T; ++t) {
              const double* dorow = dO.data() + (w * T + t) * C + h * dd;
              for (int64_t u = 0; u < T; ++u) {
                const double* v = qkv_w + u * 3 * C + 2 * C + h * dd;
                double s = 0.0;
                for (int64_t j = 0; j < dd; ++j) s += dorow[j] * v[j];
                dP[t * T + u] = s;
              }
            }
            for (int64_t u = 0; u < T; ++u) {
              double* dv = dqkv_w + u * 3 * C + 2 * C + h * dd;
              for (int64_t t = 0; t < T; ++t) {
                double p = pw[t * T + u];
                if (p == 0.0) continue;
                const double* dorow = dO.data() + (w * T + t) * C + h * dd;
                axpy(p, dorow, dv, dd);
              }
            }
            // softmax backward
            for (int64_t t = 0; t < T; ++t) {
              double dot = 0.0;
              for (int64_t u = 0; u < T; ++u) dot += dP[t * T + u] * pw[t * T + u];
              for (int64_t u = 0; u < T; ++u)
                dS[t * T + u] = pw[t * T + u] * (dP[t * T + u] - dot);
            }
            if (ptab->requires_grad)
              for (int64_t t = 0; t < T; ++t)
                for (int64_t u = 0; u < T; ++u)
                  ptab->grad[(*bias_index)[t * T + u] * Hh + h] += dS[t * T + u];
            // dQ = dS K * scale ; dK = dS^T Q * scale
            for (int64_t t = 0; t < T; ++t) {
              double* dq = dqkv_w + t * 3 * C + h * dd;
              const double* q = qkv_w + t * 3 * C + h * dd;
              for (int64_t u = 0; u < T; ++u) {
                double s = dS[t * T + u] * scale;
                if (s == 0.0) continue;
                const double* k = qkv_w + u * 3 * C + C + h * dd;
                double* dk = dqkv_w + u * 3 * C + C + h * dd;
                axpy(s, k, dq, dd);
                axpy(s, q, dk, dd);
              }
            }
          }
        }
        // qkv projection
        if (pwqkv->requires_grad) {
          pwqkv->ensure_grad();
          mm_at_acc(px->value.data(), dQKV.data(), pwqkv->grad.data(), nW * T, C, 3 * C);
        }
        if (pbq && pbq->requires_grad) {
          pbq->ensure_grad();
          for (int64_t i = 0; i < nW * T; ++i)
            axpy(1.0, dQKV.data() + i * 3 * C, pbq->grad.data(), 3 * C);
        }
        if (px->requires_grad) {
          px->ensure_grad();
          mm_bt_acc(dQKV.data(), pwqkv->value.data(), px->grad.data(), nW * T, C, 3 * C);
        }
      },
      "window_attention");
}

}  // namespace uvf
