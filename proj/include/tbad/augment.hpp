#pragma once

#include <optional>
#include <vector>

#include "tbad/image.hpp"
#include "tbad/rng.hpp"

namespace tbad {

/// Plane of a quarter-turn rotation, named by the two axes it mixes.
enum class RotationPlane { xy, xz, yz };

struct AugmentConfig {
  double probability = 0.2;
  Index3 patch_size{96, 96, 96};
  std::array<bool, 3> flip_axes{true, true, true};
  std::vector<RotationPlane> rotations{RotationPlane::xy, RotationPlane::xz, RotationPlane::yz};
  double intensity_shift_max = 0.1;
  /// Patch centres come from labelled voxels half of the time.
  bool bias_foreground = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Exact (interpolation-free) spatial transform: crop, then flips, then a
/// quarter-turn rotation. Output voxel o reads source voxel source_of(o).
struct SpatialPlan {
  Index3 origin{};
  Index3 size{};
  std::array<bool, 3> flip{false, false, false};
  std::optional<RotationPlane> plane;
  int quarter_turns = 0;

  Index3 source_of(const Index3& out) const;
};

struct AugmentPlan {
  SpatialPlan spatial;
  bool augmented = false;
  std::optional<double> intensity_shift;
};

template <class T>
Array3<T> apply_spatial(const Array3<T>& source, const SpatialPlan& plan);

/// Patch origin for a crop of `patch_size`; with `bias_foreground`, half of the
/// draws centre the patch on a uniformly chosen non-zero label voxel.
Index3 draw_patch_origin(const LabelMap& label, const Index3& patch_size, Rng& rng, bool bias_foreground);

struct Sample {
  Volume volume;
  LabelMap label;
};

Sample extract_patch(const Volume& volume, const LabelMap& label, const Index3& patch_size, Rng& rng,
                     bool bias_foreground);

/// Draws the crop from `label` and, with probability cfg.probability, a
/// non-empty subset of {flip, rotation, intensity shift}.
AugmentPlan draw_augment_plan(const LabelMap& label, const AugmentConfig& cfg, Rng& rng);

struct AugmentedSample {
  Volume volume;
  LabelMap label;
  AugmentPlan plan;
};

/// Intensities are clamped to [0,1] after the shift; the label only ever sees
/// the spatial part of the plan.
AugmentedSample augment_sample(const Volume& volume, const LabelMap& label, const AugmentConfig& cfg, Rng& rng);

Volume apply_plan(const Volume& volume, const AugmentPlan& plan);
LabelMap apply_plan(const LabelMap& label, const AugmentPlan& plan);

}  // namespace tbad
