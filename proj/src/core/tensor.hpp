#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace uvf {

// Error taxonomy shared across the library. All of these derive from
// std::runtime_error so the C API can map them to codes uniformly.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& m) : std::runtime_error(m) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& m) : std::runtime_error(m) {}
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s);

// Dense row-major N-D array of doubles. The whole artifact runs in f64 so
// finite-difference checks have headroom.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 2-D accessors (rows x cols), used heavily by token-matrix code.
  int64_t rows() const { return shape_.at(0); }
  int64_t cols() const { return shape_.at(1); }
  double& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Debug-mode NaN/Inf scan toggle. On by default in Debug builds.
bool debug_checks_enabled();
void set_debug_checks(bool on);
void check_finite(const Tensor& t, const char* op_name);

}  // namespace uvf
