#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace modelspace {

using Shape = std::vector<std::size_t>;

std::size_t num_elements(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Images use the [W, H, C] layout, so the
// element (x, y, c) lives at (x * H + y) * C + c.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws NonFiniteValue naming `where` if any element is NaN or Inf.
void require_finite(const Tensor& t, const std::string& where);

}  // namespace modelspace
