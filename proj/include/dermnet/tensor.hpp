#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dermnet {

/// Dense float32 array of rank 1..4, row-major. Rank-4 tensors are N,H,W,C.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;
  static constexpr std::size_t kMaxRank = 4;

  Tensor() = default;
  Tensor(Shape shape, float fill);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  const std::vector<float>& buffer() const noexcept { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> idx) const;
  float at(std::span<const std::size_t> idx) const { return data_[offset(idx)]; }
  float at(std::initializer_list<std::size_t> idx) const {
    return at(std::span<const std::size_t>(idx.begin(), idx.size()));
  }
  float& at(std::initializer_list<std::size_t> idx) {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

std::size_t shape_product(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

/// True iff shapes match and |a-b| <= abs_tol + rel_tol*|b| elementwise.
bool allclose(const Tensor& a, const Tensor& b, double rel_tol, double abs_tol);

}  // namespace dermnet
