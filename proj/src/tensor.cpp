#include "bdlab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "bdlab/errors.hpp"

namespace bdlab {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  if (data_.size() != shape_size(shape_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size())
    throw ShapeError("index rank " + std::to_string(index.size()) + " != tensor rank " +
                     std::to_string(shape_.size()));
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis])
      throw ShapeError("index " + std::to_string(i) + " out of range on axis " + std::to_string(axis) +
                       " of " + shape_str(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

void require_finite(const Tensor& t, const char* context) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + context);
}

}  // namespace bdlab
