#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "tbad/grid.hpp"

namespace tbad {

/// Class codes of a dissection label map. The mapping is part of the on-disk
/// contract: 0 background, 1 true lumen, 2 false lumen, 3 false-lumen thrombosis.
enum class LabelClass : std::uint8_t {
  background = 0,
  true_lumen = 1,
  false_lumen = 2,
  thrombosis = 3,
};

inline constexpr int kNumClasses = 4;
inline constexpr std::uint8_t kMaxLabel = 3;

constexpr std::uint8_t code(LabelClass c) { return static_cast<std::uint8_t>(c); }

/// A scalar grid plus its physical geometry. `affine` maps voxel indices (x, y, z)
/// to world millimetres; its upper-left 3x3 columns have norms equal to `spacing`.
template <class T>
struct Image {
  Array3<T> data;
  Vec3 spacing{1.0, 1.0, 1.0};
  Affine affine = diagonal_affine({1.0, 1.0, 1.0});
  std::string id;

  const Index3& shape() const noexcept { return data.shape(); }
};

using Volume = Image<float>;
using LabelMap = Image<std::uint8_t>;

/// Throws `shape` or `spacing`-related errors if the geometry invariants fail.
void validate_geometry(const Index3& shape, const Vec3& spacing, const Affine& affine);

void validate(const Volume& volume);

/// Geometry plus the {0,1,2,3} value-set invariant (corrupt_label otherwise).
void validate(const LabelMap& label);

/// Alignment error unless shape, spacing and affine agree exactly.
template <class A, class B>
void check_aligned(const Image<A>& a, const Image<B>& b, const std::string& what = "label");

bool same_grid(const Index3& shape_a, const Vec3& spacing_a, const Affine& affine_a, const Index3& shape_b,
               const Vec3& spacing_b, const Affine& affine_b);

template <class A, class B>
void check_aligned(const Image<A>& a, const Image<B>& b, const std::string& what) {
  require(same_grid(a.shape(), a.spacing, a.affine, b.shape(), b.spacing, b.affine), ErrorCode::alignment,
          what + " grid " + to_string(b.shape()) + " does not match " + to_string(a.shape()));
}

/// Empty image with the geometry of `like`.
template <class T, class U>
Image<T> image_like(const Image<U>& like, T fill = T{}) {
  Image<T> out;
  out.data = Array3<T>(like.shape(), fill);
  out.spacing = like.spacing;
  out.affine = like.affine;
  out.id = like.id;
  return out;
}

std::set<std::uint8_t> value_set(const LabelMap& label);

bool contains_class(const LabelMap& label, LabelClass c);

std::int64_t count_class(const LabelMap& label, std::uint8_t value);

}  // namespace tbad
