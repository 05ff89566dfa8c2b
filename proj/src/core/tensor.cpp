#include "tensor.hpp"

#include <cmath>
#include <sstream>

namespace uvf {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (int64_t e : shape_)
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape_));
  data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != numel())
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                     " changes element count");
  Tensor out;
  out.shape_ = std::move(s);
  out.data_ = data_;
  return out;
}

namespace {
#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif
}  // namespace

bool debug_checks_enabled() { return g_debug_checks; }
void set_debug_checks(bool on) { g_debug_checks = on; }

void check_finite(const Tensor& t, const char* op_name) {
  if (!g_debug_checks) return;
  if (!t.all_finite())
    throw DomainError(std::string("non-finite value produced by ") + op_name);
}

}  // namespace uvf
