#include "fgs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fgs/error.hpp"

namespace fgs {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : Tensor(shape, Buffer(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, Buffer data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data size does not match shape " + shape_.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!(shape_ == other.shape_)) {
    throw ShapeError("tensor += shape mismatch " + shape_.str() + " vs " +
                     other.shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

Tensor Tensor::batch_slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n) {
    throw ShapeError("batch slice out of range");
  }
  Shape s = shape_;
  s.n = count;
  const std::size_t per = shape_.numel() / std::max(shape_.n, 1);
  Buffer out(data_.begin() + first * per,
                          data_.begin() + (first + count) * per);
  return Tensor(s, std::move(out));
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor stack_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack_batch of nothing");
  Shape s = parts.front().shape();
  int n = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("stack_batch shape mismatch");
    }
    n += ps.n;
  }
  s.n = n;
  Buffer data;
  data.reserve(s.numel());
  for (const auto& p : parts) {
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor(s, std::move(data));
}

}  // namespace fgs
