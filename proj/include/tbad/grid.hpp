#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tbad/error.hpp"

namespace tbad {

using Index3 = std::array<std::int64_t, 3>;
using Vec3 = std::array<double, 3>;
using Affine = std::array<std::array<double, 4>, 4>;

inline std::int64_t voxel_count(const Index3& shape) { return shape[0] * shape[1] * shape[2]; }

std::string to_string(const Index3& v);

/// Axis-aligned affine with the given spacing on the diagonal and origin in the last column.
Affine diagonal_affine(const Vec3& spacing, const Vec3& origin = {0.0, 0.0, 0.0});

/// World position of a (possibly fractional) voxel index.
Vec3 apply_affine(const Affine& affine, const Vec3& index);

/// Dense 3D array indexed (x, y, z) with x varying fastest in memory:
/// linear = x + nx * (y + ny * z). This matches the NIfTI on-disk order and is
/// the axis convention of every module in the library.
template <class T>
class Array3 {
 public:
  using value_type = T;

  Array3() = default;

  explicit Array3(const Index3& shape, T fill = T{}) : shape_(shape) {
    require(shape[0] >= 0 && shape[1] >= 0 && shape[2] >= 0, ErrorCode::shape,
            "negative extent in " + to_string(shape));
    data_.assign(static_cast<std::size_t>(voxel_count(shape)), fill);
  }

  Array3(const Index3& shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    require(static_cast<std::int64_t>(data_.size()) == voxel_count(shape), ErrorCode::shape,
            "value count does not match shape " + to_string(shape));
  }

  const Index3& shape() const noexcept { return shape_; }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  std::int64_t linear(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x + shape_[0] * (y + shape_[1] * z);
  }

  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < shape_[0] && y < shape_[1] && z < shape_[2];
  }

  T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) noexcept {
    return data_[static_cast<std::size_t>(linear(x, y, z))];
  }
  const T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return data_[static_cast<std::size_t>(linear(x, y, z))];
  }

  T& operator[](std::int64_t i) noexcept { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const noexcept { return data_[static_cast<std::size_t>(i)]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool operator==(const Array3&) const = default;

 private:
  Index3 shape_{0, 0, 0};
  std::vector<T> data_;
};

}  // namespace tbad
