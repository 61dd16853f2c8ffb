#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace selora {

using Shape = std::vector<int64_t>;

/// Numeric mode for a run. f64 is the default; f32 rounds every op output
/// through IEEE single precision while keeping double storage.
enum class Precision { f64, f32 };

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense n-dimensional array of real numbers, flat row-major storage.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  /// Dimension size; negative indices count from the back.
  int64_t dim(int i) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[i]; }
  double operator[](int64_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(double v);
  bool all_finite() const;
  double max_abs() const;

private:
  Shape shape_;
  std::vector<double> data_;
};

/// In f32 mode, snap every element to the nearest single-precision value.
void round_to_precision(Tensor& t, Precision p);

}  // namespace selora
