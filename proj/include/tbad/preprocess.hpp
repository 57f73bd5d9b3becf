#pragma once

#include <optional>

#include "tbad/image.hpp"

namespace tbad {

struct PreprocessConfig {
  double hu_min = -500.0;
  double hu_max = 1000.0;
  Vec3 target_spacing{1.5, 1.5, 1.5};
  std::int64_t crop_margin = 4;
  /// Threshold on the normalized [0,1] image; 0.05 is about -425 HU with the default window.
  double foreground_threshold = 0.05;

  void validate() const;
};

/// (clamp(v, hu_min, hu_max) - hu_min) / (hu_max - hu_min).
Volume clip_and_normalize(const Volume& volume, const PreprocessConfig& cfg);

/// Inverse of the normalisation (used to store synthetic volumes in HU).
Volume denormalize_to_hu(const Volume& normalized, const PreprocessConfig& cfg);

enum class SampleKind { image, label };

/// ceil(shape * spacing / target), per axis.
Index3 resampled_shape(const Index3& shape, const Vec3& spacing, const Vec3& target);

/// Output voxel i sits at input coordinate i * target / spacing (index 0 stays
/// anchored at the same world position). Images are trilinear; kind=label
/// selects nearest neighbour and requires integral values.
Volume resample(const Volume& volume, const PreprocessConfig& cfg, SampleKind kind = SampleKind::image);
LabelMap resample(const LabelMap& label, const PreprocessConfig& cfg, SampleKind kind = SampleKind::label);

/// Inclusive voxel bounds.
struct CropBox {
  Index3 lo{};
  Index3 hi{};

  Index3 extent() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
  bool operator==(const CropBox&) const = default;
};

template <class T>
Image<T> crop(const Image<T>& image, const CropBox& box);

struct CropResult {
  Volume volume;
  std::optional<LabelMap> label;
  CropBox box;
};

/// Bounding box of voxels above foreground_threshold, grown to include every
/// labelled voxel when a label is given, plus crop_margin, clamped to the grid.
CropResult crop_foreground(const Volume& volume, const std::optional<LabelMap>& label, const PreprocessConfig& cfg);

/// Places a cropped label back into a zero canvas with the geometry of `full_grid`.
LabelMap paste_back(const LabelMap& cropped, const CropBox& box, const LabelMap& full_grid);

/// Geometry of the grid a crop came from.
struct GridGeometry {
  Index3 shape{};
  Vec3 spacing{};
  Affine affine{};
};

LabelMap paste_back(const LabelMap& cropped, const CropBox& box, const GridGeometry& full_grid);

/// Output of the full clip -> resample -> crop chain, with what is needed to map
/// predictions back onto the resampled (pre-crop) grid.
struct PreprocessedCase {
  Volume volume;
  std::optional<LabelMap> label;
  CropBox box;
  GridGeometry resampled_grid;
};

PreprocessedCase preprocess_case(const Volume& volume, const std::optional<LabelMap>& label,
                                 const PreprocessConfig& cfg);

}  // namespace tbad
