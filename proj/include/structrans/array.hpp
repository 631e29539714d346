#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace structrans {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Raised when operand shapes do not conform. The message names the op and
// every offending shape.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::vector<Shape>& shapes);
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Produced when a forward value contains NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major array of doubles.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array vector(std::vector<double> v);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double& at(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  double at(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  // Same data, new shape; sizes must agree.
  Array reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace structrans
