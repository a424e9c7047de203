#include "dermnet/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dermnet/errors.hpp"

namespace dermnet {

namespace {

void check_shape(const Tensor::Shape& shape) {
  if (shape.empty() || shape.size() > Tensor::kMaxRank) {
    throw ShapeError("tensor rank must be 1.." + std::to_string(Tensor::kMaxRank) + ", got " +
                     std::to_string(shape.size()));
  }
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape));
  }
}

}  // namespace

std::size_t shape_product(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_product(shape_)) {
    throw ShapeError("buffer length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

std::size_t Tensor::offset(std::span<const std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw IndexError("index rank " + std::to_string(idx.size()) + " does not match tensor rank " +
                     std::to_string(shape_.size()));
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= shape_[i]) {
      throw IndexError("index " + std::to_string(idx[i]) + " out of bounds for axis " + std::to_string(i) +
                       " with extent " + std::to_string(shape_[i]));
    }
    off = off * shape_[i] + idx[i];
  }
  return off;
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool allclose(const Tensor& a, const Tensor& b, double rel_tol, double abs_tol) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    const double y = b[i];
    if (!(std::abs(x - y) <= abs_tol + rel_tol * std::abs(y))) return false;
  }
  return true;
}

}  // namespace dermnet
