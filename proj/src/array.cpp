#include "structrans/array.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace structrans {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k) os << ',';
    os << shape[k];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
std::string shape_message(const std::string& op, const std::vector<Shape>& shapes) {
  std::string msg = op + ": incompatible shapes";
  for (const auto& s : shapes) msg += " " + shape_string(s);
  return msg;
}
}  // namespace

ShapeError::ShapeError(const std::string& op, const std::vector<Shape>& shapes)
    : std::invalid_argument(shape_message(op, shapes)) {}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("Array", {shape_, Shape{data_.size()}});
  }
}

Array Array::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Array(std::move(s), std::move(v));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Array(Shape{rows, cols}, std::move(v));
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw UsageError("Array::dim: axis out of range");
  return shape_[axis];
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) throw ShapeError("reshape", {shape_, shape});
  return Array(std::move(shape), data_);
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Array::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace structrans
